'''
Coefficients of the optimality system and the sparse space-time matrix.

The Euler-Lagrange equation of the flow energy reads, row j = 1, 2,

    A^j + B^j_k u^k + C^{lj}_k d_l u^k + D^{lm} d_l d_m u^j = 0

and is assembled as M u = -A with M = B + C d + D d^2, so that the flat
static case yields the symmetric positive definite Horn-Schunck matrix.

Unknown (t, i1, i2, j) has index ((t * n1 + i1) * n2 + i2) * 2 + j.
'''
import logging
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from django.conf import settings
from scipy.io import mmwrite

from helpers.finite_differences import check_axis_length, derivative, first_derivative_stencil

from flow_app.exceptions import InconsistentPeriodicityException, \
    InvalidConfigException, \
    GridTooSmallException, \
    NumericsException, \
    ShapeMismatchException

logger = logging.getLogger(__name__)

SPATIAL_BOUNDARIES = ('dirichlet_zero', 'neumann', 'periodic_x1', 'periodic_x2', 'periodic_both')
TIME_SCHEMES = ('one_sided', 'ghost')
TRACE_CONVENTIONS = ('lemma', 'theorem')

# periodicity (x1, x2) implied by each spatial boundary choice
BOUNDARY_PERIODICITY = {
    'dirichlet_zero': (False, False),
    'neumann': (False, False),
    'periodic_x1': (True, False),
    'periodic_x2': (False, True),
    'periodic_both': (True, True),
}

INTERIOR = 0
DIRICHLET = 1
NEUMANN_X1 = 2
NEUMANN_X2 = 3
TIME_START = 4
TIME_END = 5

EYE = np.eye(2)


@dataclass
class CoefficientFields:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    alpha: float
    beta: float
    gamma: float
    christoffel: np.ndarray
    omega: np.ndarray
    # kappa_m = sum_i omega^m_ii, the negative divergence of the frame fields
    kappa: np.ndarray

    @property
    def shape(self):
        return self.A.shape[:3]


@dataclass
class BoundarySpec:
    spatial: str = None
    time_scheme: str = None
    neumann_connection: bool = True

    def __post_init__(self):
        if self.spatial is None:
            self.spatial = settings.DEFAULT_BOUNDARY
        if self.time_scheme is None:
            self.time_scheme = settings.DEFAULT_TIME_BOUNDARY
        if self.spatial not in SPATIAL_BOUNDARIES:
            raise InvalidConfigException('Unknown boundary "%s"; expected one of %s.'
                % (self.spatial, ', '.join(SPATIAL_BOUNDARIES)))
        if self.time_scheme not in TIME_SCHEMES:
            raise InvalidConfigException('Unknown time boundary scheme "%s"; expected one of %s.'
                % (self.time_scheme, ', '.join(TIME_SCHEMES)))

    @property
    def periodic(self):
        return BOUNDARY_PERIODICITY[self.spatial]

    def check_wraps(self, wraps):
        wraps = tuple(bool(w) for w in wraps)
        if wraps != self.periodic:
            raise InconsistentPeriodicityException('Boundary "%s" needs periodicity %s in (x1, x2) '
                'but the surface has %s.' % (self.spatial, self.periodic, wraps))


@dataclass
class LinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    shape: tuple
    node_kinds: np.ndarray

    @property
    def n_unknowns(self):
        return self.rhs.shape[0]

    def residual(self, u):
        '''
        M u - rhs, which is M u + A on the interior rows.
        '''
        return self.matrix @ np.ravel(u) - self.rhs

    def to_field(self, vector):
        return np.reshape(vector, tuple(self.shape) + (2,))


def _frame_divergence_terms(abar, dabar):
    # sum_{i,m} abar^m_i d_m abar^l_i
    return np.einsum('...im,...mil->...l', abar, dabar)


def _connection_partials(omega, steps, wraps):
    '''
    d_m omega^j_ik stacked as [..., m, j, i, k].
    '''
    periodic = (False,) + tuple(wraps)
    return np.stack([derivative(omega, axis, steps[axis], periodic[axis]) for axis in range(3)], axis=-4)


def pde_coefficients(geom, frame, chris, conn, imderiv, alpha, beta, gamma, trace_convention=None):
    if trace_convention is None:
        trace_convention = settings.DEFAULT_TRACE_CONVENTION
    if trace_convention not in TRACE_CONVENTIONS:
        raise InvalidConfigException('Unknown trace convention "%s"; expected one of %s.'
            % (trace_convention, ', '.join(TRACE_CONVENTIONS)))
    if imderiv.shape != tuple(geom.shape):
        raise ShapeMismatchException('Image derivatives on %s do not match the surface grid %s.'
            % (imderiv.shape, tuple(geom.shape)))

    abar = frame.extended(alpha)
    dabar = conn.frame_partials
    omega = conn.omega

    # data term: the frame components of the image gradient, d_i I g^ik b^j_k
    grad_frame = np.einsum('...i,...ik,...kj->...j', imderiv.spatial_gradient(), geom.ginv, frame.b)
    A = imderiv.dIt[..., None] * grad_frame
    B = np.einsum('...j,...k->...jk', grad_frame, grad_frame) + beta * EYE

    kappa = np.einsum('...mii->...m', omega).copy()
    if trace_convention == 'theorem':
        kappa[..., 0] *= 2.0

    # omega^j_ik with spatial j and k
    W = omega[..., 1:, :, 1:]
    domega = _connection_partials(omega, geom.steps, geom.wraps)
    T1 = np.einsum('...im,...mjik->...jk', abar, domega[..., :, 1:, :, 1:])
    T2 = np.einsum('...jim,...mik->...jk', omega[..., 1:, :, :], omega[..., :, :, 1:])
    T3 = np.einsum('...i,...jik->...jk', kappa, W)
    B = B + gamma * (T3 - T1 - T2)

    divergence = _frame_divergence_terms(abar, dabar)
    drift = np.einsum('...i,...il->...l', kappa, abar) - divergence
    C = gamma * drift[..., :, None, None] * EYE \
        - 2.0 * gamma * np.einsum('...jik,...il->...ljk', W, abar)

    D = -gamma * np.einsum('...im,...il->...ml', abar, abar)

    for name, values in (('A', A), ('B', B), ('C', C), ('D', D)):
        if not np.all(np.isfinite(values)):
            index = np.argwhere(~np.isfinite(values))[0][:3]
            raise NumericsException('Coefficient %s is not finite.' % name, grid_index=index)

    return CoefficientFields(A, B, C, D, alpha, beta, gamma, chris.gamma, omega, kappa)


def classify_nodes(shape, bspec):
    '''
    Row type of every grid node. Spatial boundary rows take precedence
    over the time boundary rows; x1 edges take precedence at corners.
    '''
    nt, n1, n2 = shape
    periodic1, periodic2 = bspec.periodic
    kinds = np.full(shape, INTERIOR, dtype=np.int8)
    kinds[0] = TIME_START
    kinds[-1] = TIME_END

    if bspec.spatial == 'neumann':
        edge1, edge2 = NEUMANN_X1, NEUMANN_X2
    else:
        edge1, edge2 = DIRICHLET, DIRICHLET
    if not periodic2:
        kinds[:, :, [0, -1]] = edge2
    if not periodic1:
        kinds[:, [0, -1], :] = edge1
    return kinds


class _Triplets:
    '''
    Collects 2x2 blocks of the sparse matrix in coordinate form.
    '''
    def __init__(self, shape, kinds, periodic):
        self.shape = tuple(shape)
        self.periodic = (False,) + tuple(periodic)
        self.is_dirichlet = np.ravel(kinds == DIRICHLET)
        self.rows = []
        self.cols = []
        self.vals = []

    def shifted(self, nodes, offset):
        shifted = []
        for axis, (index, step) in enumerate(zip(nodes, offset)):
            index = index + step
            if self.periodic[axis]:
                index = np.mod(index, self.shape[axis])
            shifted.append(index)
        return tuple(shifted)

    def add(self, row_nodes, col_nodes, blocks, keep_dirichlet=False):
        rows = np.ravel_multi_index(row_nodes, self.shape)
        cols = np.ravel_multi_index(col_nodes, self.shape)
        if not keep_dirichlet:
            # u = 0 on Dirichlet nodes, so their columns drop out
            keep = ~self.is_dirichlet[cols]
            rows = rows[keep]
            cols = cols[keep]
            blocks = blocks[keep]
        for j in range(2):
            for k in range(2):
                self.rows.append(2 * rows + j)
                self.cols.append(2 * cols + k)
                self.vals.append(blocks[:, j, k])

    def add_stencil(self, nodes, stencil):
        for offset, blocks in stencil.items():
            self.add(nodes, self.shifted(nodes, offset), blocks)

    def to_csr(self):
        n = 2 * int(np.prod(self.shape))
        if self.rows:
            rows = np.concatenate(self.rows)
            cols = np.concatenate(self.cols)
            vals = np.concatenate(self.vals)
        else:
            rows = cols = np.zeros(0, dtype=int)
            vals = np.zeros(0)
        matrix = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        matrix.eliminate_zeros()
        matrix.sort_indices()
        return matrix


def _scalar_blocks(values):
    return np.asarray(values)[:, None, None] * EYE


def _interior_stencil(coeffs, mask, steps):
    '''
    Central differences for B u + C d u + D d^2 u; the mixed time-space
    entries of D vanish, so the only cross stencil is the 1-2 one.
    '''
    B = coeffs.B[mask]
    C = coeffs.C[mask]
    D = coeffs.D[mask]
    h = steps

    center = B + _scalar_blocks(sum(-2.0 * D[:, l, l] / h[l] ** 2 for l in range(3)))
    stencil = {(0, 0, 0): center}
    for l in range(3):
        for s in (-1, 1):
            offset = [0, 0, 0]
            offset[l] = s
            stencil[tuple(offset)] = s * C[:, l] / (2.0 * h[l]) + _scalar_blocks(D[:, l, l] / h[l] ** 2)
    for s1 in (-1, 1):
        for s2 in (-1, 1):
            stencil[(0, s1, s2)] = _scalar_blocks(2.0 * D[:, 1, 2] * s1 * s2 / (4.0 * h[1] * h[2]))
    return stencil


def _time_connection(conn, mask, bspec):
    # omega^j_0k for spatial j, k
    if not bspec.neumann_connection:
        return np.zeros((int(mask.sum()), 2, 2))
    return conn.omega[mask][:, 1:, 0, 1:]


def _one_sided_time_rows(triplets, conn, mask, kind, bspec, alpha, h_t):
    '''
    (1/alpha) d_t u^j + omega^j_0k u^k = 0 with second-order one-sided
    differences in time.
    '''
    nodes = np.nonzero(mask)
    count = len(nodes[0])
    W = _time_connection(conn, mask, bspec)
    scale = 1.0 / (2.0 * h_t * alpha)
    if kind == TIME_START:
        offsets, weights = (0, 1, 2), (-3.0, 4.0, -1.0)
    else:
        offsets, weights = (0, -1, -2), (3.0, -4.0, 1.0)
    stencil = {}
    for dt, weight in zip(offsets, weights):
        stencil[(dt, 0, 0)] = _scalar_blocks(np.full(count, weight * scale))
    stencil[(0, 0, 0)] = stencil[(0, 0, 0)] + W
    triplets.add_stencil(nodes, stencil)


def _ghost_time_rows(triplets, coeffs, conn, mask, kind, bspec, steps):
    '''
    The interior equation at a time end, with the ghost value eliminated
    through the central Neumann condition. Rows are halved, which keeps
    the flat static matrix symmetric.
    '''
    nodes = np.nonzero(mask)
    W = _time_connection(conn, mask, bspec)
    h_t = steps[0]
    ghost = 2.0 * h_t * coeffs.alpha * W
    stencil = _interior_stencil(coeffs, mask, steps)
    if kind == TIME_START:
        # u_{-1} = u_1 + 2 h alpha W u_0
        outside = stencil.pop((-1, 0, 0))
        stencil[(1, 0, 0)] = stencil[(1, 0, 0)] + outside
        stencil[(0, 0, 0)] = stencil[(0, 0, 0)] + outside @ ghost
    else:
        # u_{n} = u_{n-2} - 2 h alpha W u_{n-1}
        outside = stencil.pop((1, 0, 0))
        stencil[(-1, 0, 0)] = stencil[(-1, 0, 0)] + outside
        stencil[(0, 0, 0)] = stencil[(0, 0, 0)] - outside @ ghost
    triplets.add_stencil(nodes, {offset: 0.5 * blocks for offset, blocks in stencil.items()})


def _neumann_rows(triplets, frame, conn, mask, edge_axis, steps):
    '''
    nabla_nu u = 0 on an edge of the chart, nu the g-unit conormal. In
    frame components nu_i is proportional to a^l_i for the edge's
    coordinate l.
    '''
    nodes = np.nonzero(mask)
    a = frame.a[mask]
    nu = a[:, :, edge_axis]
    nu = nu / np.linalg.norm(nu, axis=-1, keepdims=True)
    weights = np.einsum('ni,nil->nl', nu, a)

    center = np.einsum('ni,njik->njk', nu, conn.omega[mask][:, 1:, 1:, 1:])
    triplets.add(nodes, nodes, center)
    for l in range(2):
        axis = l + 1
        offsets, stencil_weights = first_derivative_stencil(triplets.shape[axis], steps[axis])
        index = nodes[axis]
        for q in range(3):
            col = list(nodes)
            col[axis] = index + offsets[index, q]
            triplets.add(nodes, tuple(col), _scalar_blocks(weights[:, l] * stencil_weights[index, q]))


def assemble_system(coeffs, bspec, h_t, h_1, h_2, frame, conn, wraps=None):
    started = time.perf_counter()
    shape = tuple(coeffs.shape)
    steps = (h_t, h_1, h_2)
    if wraps is not None:
        bspec.check_wraps(wraps)

    nt, n1, n2 = shape
    if bspec.time_scheme == 'one_sided':
        check_axis_length(nt, False, 'time axis')
    elif nt < 2:
        raise GridTooSmallException('The time axis needs at least 2 frames, got %d.' % nt)
    for n, periodic, name in zip((n1, n2), bspec.periodic, ('x1 axis', 'x2 axis')):
        check_axis_length(n, periodic, name)

    kinds = classify_nodes(shape, bspec)
    triplets = _Triplets(shape, kinds, bspec.periodic)

    interior = kinds == INTERIOR
    triplets.add_stencil(np.nonzero(interior), _interior_stencil(coeffs, interior, steps))

    rhs = np.zeros(shape + (2,))
    rhs[interior] = -coeffs.A[interior]

    for kind in (TIME_START, TIME_END):
        mask = kinds == kind
        if not mask.any():
            continue
        if bspec.time_scheme == 'ghost':
            _ghost_time_rows(triplets, coeffs, conn, mask, kind, bspec, steps)
            rhs[mask] = -0.5 * coeffs.A[mask]
        else:
            _one_sided_time_rows(triplets, conn, mask, kind, bspec, coeffs.alpha, h_t)

    for kind, edge_axis in ((NEUMANN_X1, 0), (NEUMANN_X2, 1)):
        mask = kinds == kind
        if mask.any():
            _neumann_rows(triplets, frame, conn, mask, edge_axis, steps)

    dirichlet = np.nonzero(kinds == DIRICHLET)
    if len(dirichlet[0]) > 0:
        identity = np.broadcast_to(EYE, (len(dirichlet[0]), 2, 2))
        triplets.add(dirichlet, dirichlet, identity, keep_dirichlet=True)

    matrix = triplets.to_csr()
    logger.info('Assembled %d unknowns with %d nonzeros (%s boundary, %s time rows) in %.2fs'
        % (matrix.shape[0], matrix.nnz, bspec.spatial, bspec.time_scheme, time.perf_counter() - started))
    return LinearSystem(matrix, rhs.ravel(), shape, kinds)


def dump_matrix_market(system, path):
    mmwrite(path, system.matrix, comment='surface optical flow system, %d unknowns' % system.n_unknowns)
    logger.info('Wrote the system matrix to %s' % path)
