import os
import shutil
import tempfile
from dataclasses import replace

import numpy as np
import scipy.sparse as sp
from scipy.io import mmread
from scipy.sparse.linalg import spsolve

from django.test import SimpleTestCase, override_settings

from flow_app.assembly import BoundarySpec, \
    INTERIOR, \
    DIRICHLET, \
    TIME_START, \
    TIME_END, \
    NEUMANN_X1, \
    NEUMANN_X2, \
    classify_nodes, \
    pde_coefficients, \
    assemble_system, \
    dump_matrix_market
from flow_app.exceptions import GridTooSmallException, \
    InconsistentPeriodicityException, \
    InvalidConfigException
from flow_app.pipeline import prepare_problem

from flow_app.tests.utils import CONSTANT_IMAGE, run_config, flat_problem


def horn_schunck_reference(imderiv, shape, beta, gamma, h_t, h_1, h_2):
    '''
    Node-by-node assembly of the spatio-temporal Horn-Schunck system on a
    static flat plane with alpha = 1: zero Dirichlet values in space and
    one-sided Neumann rows in time.
    '''
    nt, n1, n2 = shape
    n = 2 * nt * n1 * n2
    M = sp.lil_matrix((n, n))
    rhs = np.zeros(n)

    def index(t, i1, i2, c):
        return ((t * n1 + i1) * n2 + i2) * 2 + c

    def on_edge(i1, i2):
        return i1 in (0, n1 - 1) or i2 in (0, n2 - 1)

    neighbours = [((-1, 0, 0), h_t), ((1, 0, 0), h_t), ((0, -1, 0), h_1), ((0, 1, 0), h_1),
        ((0, 0, -1), h_2), ((0, 0, 1), h_2)]
    for t in range(nt):
        for i1 in range(n1):
            for i2 in range(n2):
                if on_edge(i1, i2):
                    for c in range(2):
                        M[index(t, i1, i2, c), index(t, i1, i2, c)] = 1.0
                    continue
                if t == 0 or t == nt - 1:
                    sign = 1 if t == 0 else -1
                    for c in range(2):
                        row = index(t, i1, i2, c)
                        for step, weight in zip((0, 1, 2), (-3.0, 4.0, -1.0)):
                            M[row, index(t + sign * step, i1, i2, c)] += sign * weight / (2 * h_t)
                    continue

                grad = (imderiv.dI1[t, i1, i2], imderiv.dI2[t, i1, i2])
                for c in range(2):
                    row = index(t, i1, i2, c)
                    rhs[row] = -imderiv.dIt[t, i1, i2] * grad[c]
                    for k in range(2):
                        M[row, index(t, i1, i2, k)] += grad[c] * grad[k] + (beta if c == k else 0.0)
                    M[row, row] += 2 * gamma * (1 / h_t ** 2 + 1 / h_1 ** 2 + 1 / h_2 ** 2)
                    for (dt, d1, d2), h in neighbours:
                        if on_edge(i1 + d1, i2 + d2):
                            continue
                        M[row, index(t + dt, i1 + d1, i2 + d2, c)] += -gamma / h ** 2
    return M.tocsr(), rhs


class TestCoefficients(SimpleTestCase):

    def test_flat_static_coefficients(self):
        '''
        On the static plane the coefficients reduce to the Horn-Schunck
        ones: no first-order term and D = -gamma I.
        '''
        problem = flat_problem(gamma=2.0)
        coeffs = problem.coeffs
        imderiv = problem.imderiv
        grad = imderiv.spatial_gradient()
        np.testing.assert_allclose(coeffs.A, imderiv.dIt[..., None] * grad, atol=1e-15)
        expected_B = np.einsum('...j,...k->...jk', grad, grad) + 0.1 * np.eye(2)
        np.testing.assert_allclose(coeffs.B, expected_B, atol=1e-15)
        np.testing.assert_allclose(coeffs.C, 0.0, atol=1e-14)
        np.testing.assert_allclose(coeffs.D, np.broadcast_to(-2.0 * np.eye(3), coeffs.D.shape))

    def test_time_entry_of_second_order_term(self):
        problem = flat_problem(alpha=4.0, assemble=False)
        np.testing.assert_allclose(problem.coeffs.D[..., 0, 0], -1.0 / 16.0)
        np.testing.assert_allclose(problem.coeffs.D, np.swapaxes(problem.coeffs.D, -1, -2))

    def test_constant_image_has_no_data_term(self):
        problem = flat_problem(images=CONSTANT_IMAGE, assemble=False)
        np.testing.assert_array_equal(problem.coeffs.A, 0.0)
        np.testing.assert_allclose(problem.coeffs.B, np.broadcast_to(0.1 * np.eye(2), problem.coeffs.B.shape))

    def test_trace_conventions(self):
        '''
        The alternative convention doubles the time component of kappa only.
        '''
        config = run_config('expression', (5, 5, 5), params={
            'f': ['(1+t)*x1', '(1+t)*x2', '0'], 'x1_range': [0, 4], 'x2_range': [0, 4]})
        problem = prepare_problem(config, assemble=False)
        args = (problem.geom, problem.frame, problem.chris, problem.conn, problem.imderiv, 1.0, 0.1, 1.0)
        lemma = pde_coefficients(*args, trace_convention='lemma')
        theorem = pde_coefficients(*args, trace_convention='theorem')
        np.testing.assert_allclose(theorem.kappa[..., 0], 2 * lemma.kappa[..., 0])
        np.testing.assert_array_equal(theorem.kappa[..., 1:], lemma.kappa[..., 1:])

        trace = np.einsum('...ij,...ji->...', problem.geom.ginv, problem.geom.dtg)
        np.testing.assert_allclose(lemma.kappa[..., 0], -0.5 * trace, atol=1e-10)
        with self.assertRaises(InvalidConfigException):
            pde_coefficients(*args, trace_convention='average')

    @override_settings(DEFAULT_TRACE_CONVENTION='theorem')
    def test_trace_convention_default_from_settings(self):
        problem = flat_problem(assemble=False)
        self.assertEqual(problem.config.trace_convention, 'theorem')


class TestBoundarySpec(SimpleTestCase):

    def test_periodicity(self):
        self.assertEqual(BoundarySpec('periodic_x1').periodic, (True, False))
        BoundarySpec('periodic_both').check_wraps((True, True))
        with self.assertRaises(InconsistentPeriodicityException):
            BoundarySpec('periodic_both').check_wraps((False, False))

    def test_unknown_names(self):
        with self.assertRaises(InvalidConfigException):
            BoundarySpec('robin')
        with self.assertRaises(InvalidConfigException):
            BoundarySpec('neumann', 'reflect')

    @override_settings(DEFAULT_BOUNDARY='neumann', DEFAULT_TIME_BOUNDARY='ghost')
    def test_defaults_from_settings(self):
        bspec = BoundarySpec()
        self.assertEqual((bspec.spatial, bspec.time_scheme), ('neumann', 'ghost'))

    def test_node_classification(self):
        '''
        Spatial edges win over the time ends, x1 edges over x2 edges.
        '''
        kinds = classify_nodes((3, 3, 3), BoundarySpec('dirichlet_zero'))
        self.assertEqual(np.sum(kinds == INTERIOR), 1)
        self.assertEqual(kinds[1, 1, 1], INTERIOR)
        self.assertEqual(kinds[0, 1, 1], TIME_START)
        self.assertEqual(kinds[2, 1, 1], TIME_END)
        self.assertEqual(kinds[0, 0, 0], DIRICHLET)

        kinds = classify_nodes((3, 4, 4), BoundarySpec('neumann'))
        self.assertEqual(kinds[1, 0, 0], NEUMANN_X1)
        self.assertEqual(kinds[1, 1, 0], NEUMANN_X2)

        kinds = classify_nodes((3, 4, 4), BoundarySpec('periodic_x1'))
        self.assertEqual(kinds[1, 0, 1], INTERIOR)
        self.assertEqual(kinds[1, 1, 0], DIRICHLET)


class TestAssembly(SimpleTestCase):

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def test_matches_horn_schunck_reference(self):
        '''
        On the static plane the assembled system and its solution agree
        with a node-by-node spatio-temporal Horn-Schunck assembly.
        '''
        problem = flat_problem(shape=(10, 32, 32), beta=0.1, time_boundary='one_sided',
            boundary='dirichlet_zero')
        system = problem.system
        reference, rhs = horn_schunck_reference(problem.imderiv, (10, 32, 32), 0.1, 1.0, 1.0, 1.0, 1.0)

        self.assertLessEqual(abs(system.matrix - reference).max(), 1e-12)
        np.testing.assert_allclose(system.rhs, rhs, atol=1e-12)

        u = spsolve(system.matrix.tocsc(), system.rhs)
        u_reference = spsolve(reference.tocsc(), rhs)
        self.assertLessEqual(np.abs(u - u_reference).max() / np.abs(u_reference).max(), 1e-8)

    def test_ghost_rows_give_spd_matrix(self):
        '''
        With the ghost time closure the static flat matrix is symmetric and
        positive definite.
        '''
        problem = flat_problem(shape=(3, 5, 5), beta=0.1, time_boundary='ghost')
        M = problem.system.matrix.toarray()
        self.assertLessEqual(np.abs(M - M.T).max(), 1e-12)
        self.assertGreater(np.linalg.eigvalsh(M).min(), 0.0)

    def test_constant_flow_spans_the_nullspace(self):
        '''
        Without beta and image gradients, constant fields solve the
        homogeneous system under natural boundary conditions.
        '''
        for kind, boundary, time_boundary in (('flat_plane', 'neumann', 'ghost'),
                ('flat_torus', 'periodic_both', 'one_sided')):
            config = run_config(kind, (3, 5, 5), CONSTANT_IMAGE, beta=0.0, boundary=boundary,
                time_boundary=time_boundary)
            system = prepare_problem(config).system
            u = np.tile([0.3, -0.7], system.n_unknowns // 2)
            self.assertLess(np.abs(system.matrix @ u).max(), 1e-12)
            singular_values = np.linalg.svd(system.matrix.toarray(), compute_uv=False)
            self.assertLess(singular_values.min(), 1e-10)

    def test_dirichlet_rows(self):
        problem = flat_problem(shape=(3, 3, 3))
        system = problem.system
        self.assertEqual(2 * np.sum(system.node_kinds == INTERIOR), 2)
        rows = np.nonzero(np.repeat(np.ravel(system.node_kinds == DIRICHLET), 2))[0]
        M = system.matrix.tocsr()
        for row in rows:
            start, end = M.indptr[row], M.indptr[row + 1]
            np.testing.assert_array_equal(M.indices[start:end], [row])
            self.assertEqual(M.data[start], 1.0)
            self.assertEqual(system.rhs[row], 0.0)

    def test_zero_vector_residual_on_constant_image(self):
        problem = flat_problem(images=CONSTANT_IMAGE)
        residual = problem.system.residual(np.zeros(problem.system.n_unknowns))
        np.testing.assert_array_equal(residual, 0.0)

    def test_stencil_width_on_torus(self):
        config = run_config('deforming_torus', (5, 16, 8), boundary='periodic_both', steps=[1, 1, 1],
            images={'synthetic': {'kind': 'blobs'}})
        matrix = prepare_problem(config).system.matrix
        self.assertLessEqual(np.diff(matrix.indptr).max(), 38)
        self.assertEqual(matrix.shape, (2 * 5 * 16 * 8,) * 2)

    def test_periodicity_must_match_surface(self):
        problem = flat_problem(assemble=False)
        with self.assertRaises(InconsistentPeriodicityException):
            assemble_system(problem.coeffs, BoundarySpec('periodic_both'), 1.0, 1.0, 1.0,
                problem.frame, problem.conn, problem.surface.wraps)
        with self.assertRaises(InconsistentPeriodicityException):
            prepare_problem(run_config('flat_plane', (3, 5, 5), boundary='periodic_x2'))

    def test_one_sided_time_rows_need_three_frames(self):
        problem = flat_problem(shape=(3, 5, 5), assemble=False)
        coeffs = problem.coeffs
        short = replace(coeffs, A=coeffs.A[:2], B=coeffs.B[:2], C=coeffs.C[:2], D=coeffs.D[:2])
        with self.assertRaises(GridTooSmallException):
            assemble_system(short, BoundarySpec('dirichlet_zero', 'one_sided'), 1.0, 1.0, 1.0,
                problem.frame, problem.conn)

    def test_matrix_market_dump(self):
        problem = flat_problem(shape=(3, 4, 4))
        path = os.path.join(self.tmpdir, 'system.mtx')
        dump_matrix_market(problem.system, path)
        loaded = sp.csr_matrix(mmread(path))
        self.assertLessEqual(abs(loaded - problem.system.matrix).max(), 1e-12 * abs(problem.system.matrix).max())
