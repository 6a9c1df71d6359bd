import os
import io
import json
import shutil
import tempfile
import unittest.mock as mock

import numpy as np
from PIL import Image

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from flow_app.fileformats import read_srf1, write_flo, write_img1
from flow_app.solver import SolveReport
from flow_app.management.commands.gen_surface import parse_param

from flow_app.tests.utils import CONSTANT_IMAGE, WAVES


class CommandTestCase(SimpleTestCase):

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def path(self, *names):
        return os.path.join(self.tmpdir, *names)

    def call(self, *args, **options):
        out = io.StringIO()
        call_command(*args, stdout=out, **options)
        return out.getvalue()

    def assertExitCode(self, code, *args, **options):
        with self.assertRaises(CommandError) as cm:
            self.call(*args, **options)
        self.assertEqual(cm.exception.returncode, code)
        return cm.exception

    def write_config(self, name='run.json', shape=(3, 6, 6), images=None, **options):
        nt, n1, n2 = shape
        d = {
            'surface': {'kind': 'flat_plane', 'nt': nt, 'n1': n1, 'n2': n2},
            'images': images or WAVES,
            'beta': 0.1,
        }
        d.update(options)
        path = self.path(name)
        with open(path, 'w') as fout:
            json.dump(d, fout)
        return path


class TestGenSurface(CommandTestCase):

    def test_flat_plane(self):
        out = self.call('gen_surface', self.path('plane.srf'), kind='flat_plane', nt=3, n1=4, n2=4)
        self.assertIn('plane.srf', out)
        surface = read_srf1(self.path('plane.srf'))
        self.assertEqual(surface.f.reshape(-1, 3).shape[0], 48)
        np.testing.assert_array_equal(surface.f[..., 2], 0.0)

    def test_parameters_and_steps(self):
        self.call('gen_surface', self.path('torus.srf'), kind='deforming_torus', nt=3, n1=16, n2=8,
            param=['R=4', 'ripple_amplitude=0.1'], steps=[1.0, 1.0, 1.0])
        surface = read_srf1(self.path('torus.srf'))
        self.assertEqual(surface.steps, (1.0, 1.0, 1.0))
        self.assertAlmostEqual(surface.f[0, 0, 0, 0], 5.0)

    def test_graph_heights_from_file(self):
        heights = np.full((3, 5, 5), 0.25)
        write_img1(self.path('heights.img1'), heights)
        self.call('gen_surface', self.path('graph.srf'), kind='graph', nt=3, n1=5, n2=5,
            heights=self.path('heights.img1'))
        np.testing.assert_allclose(read_srf1(self.path('graph.srf')).f[..., 2], 0.25)

        self.assertExitCode(1, 'gen_surface', self.path('plane.srf'), kind='flat_plane', nt=3, n1=5, n2=5,
            heights=self.path('heights.img1'))

    def test_bad_parameter(self):
        self.assertExitCode(1, 'gen_surface', self.path('plane.srf'), kind='flat_plane', nt=3, n1=4, n2=4,
            param=['R'])
        self.assertFalse(os.path.exists(self.path('plane.srf')))

    def test_parse_param(self):
        self.assertEqual(parse_param('R=2.5'), ('R', 2.5))
        self.assertEqual(parse_param('z=x1*x2'), ('z', 'x1*x2'))
        self.assertEqual(parse_param('f=["x1","x2","0"]'), ('f', ['x1', 'x2', '0']))


class TestSolve(CommandTestCase):

    def test_writes_artifacts(self):
        config = self.write_config()
        out = self.call('solve', config, output_dir=self.path('out'), rel_tol=1e-6, history=True)
        self.assertIn('converged', out)
        self.assertIn('Energy E =', out)
        names = set(os.listdir(self.path('out')))
        self.assertTrue({'report.json', 'u_frame.npy', 'flow.fl3d', 'history.csv', 'frame_0000.flo'} <= names)
        self.assertNotIn('system.mtx', names)
        with open(self.path('out', 'report.json')) as fin:
            report = json.load(fin)
        self.assertEqual(report['config']['solver']['rel_tol'], 1e-6)

    def test_command_line_overrides(self):
        config = self.write_config()
        with mock.patch('flow_app.pipeline.gmres_solve') as gmres:
            gmres.side_effect = lambda system, cfg: (np.zeros(system.n_unknowns),
                SolveReport(3, 0.5, False, 0.01))
            out = self.call('solve', config, output_dir=self.path('out'), alpha=2.0, restart=4, max_iters=8,
                no_precond=True, deterministic=True, dump_matrix=True)
        cfg = gmres.call_args[0][1]
        self.assertEqual((cfg.restart, cfg.max_iters, cfg.preconditioner, cfg.deterministic),
            (4, 8, 'none', True))
        self.assertIn('did not converge', out)
        self.assertTrue(os.path.exists(self.path('out', 'system.mtx')))
        with open(self.path('out', 'report.json')) as fin:
            self.assertEqual(json.load(fin)['config']['alpha'], 2.0)

    def test_normalize_flag(self):
        frames = 0.2 + 0.4 * np.random.RandomState(2).rand(3, 6, 6)
        write_img1(self.path('frames.img1'), frames)
        config = self.write_config(images={'path': self.path('frames.img1')})
        self.call('solve', config, output_dir=self.path('out'), normalize=True)
        with open(self.path('out', 'report.json')) as fin:
            images = json.load(fin)['config']['images']
        self.assertEqual(images, {'path': self.path('frames.img1'), 'normalize': True})

    def test_breakdown_exit_code(self):
        config = self.write_config()
        with mock.patch('flow_app.pipeline.gmres_solve') as gmres:
            gmres.side_effect = lambda system, cfg: (np.zeros(system.n_unknowns),
                SolveReport(2, 0.9, False, 0.01, True))
            error = self.assertExitCode(3, 'solve', config, output_dir=self.path('out'))
        self.assertIn('broke down', str(error))

    def test_constant_image(self):
        config = self.write_config(images=CONSTANT_IMAGE)
        self.call('solve', config, output_dir=self.path('out'))
        np.testing.assert_array_equal(np.load(self.path('out', 'u_frame.npy')), 0.0)
        with open(self.path('out', 'report.json')) as fin:
            self.assertEqual(json.load(fin)['energy']['E'], 0.0)

    def test_deterministic_runs_are_identical(self):
        config = self.write_config()
        for name in ('first', 'second'):
            self.call('solve', config, output_dir=self.path(name), deterministic=True)
        for name in sorted(os.listdir(self.path('first'))):
            if not name.endswith('.flo'):
                continue
            with open(self.path('first', name), 'rb') as first, open(self.path('second', name), 'rb') as second:
                self.assertEqual(first.read(), second.read(), msg=name)

    def test_missing_images(self):
        config = self.write_config(images={'path': self.path('missing.img1')})
        self.assertExitCode(2, 'solve', config, output_dir=self.path('out'))

    def test_missing_config(self):
        self.assertExitCode(1, 'solve', self.path('missing.json'))

    def test_degenerate_metric(self):
        '''
        A chart that collapses x2 has a singular metric.
        '''
        config = self.write_config(surface={'kind': 'expression', 'nt': 3, 'n1': 5, 'n2': 5,
            'params': {'f': ['x1', '0', '0'], 'x1_range': [0, 4], 'x2_range': [0, 4]}})
        error = self.assertExitCode(3, 'solve', config, output_dir=self.path('out'))
        self.assertIn('grid index', str(error))

    def test_inconsistent_periodicity(self):
        config = self.write_config(boundary='periodic_both')
        self.assertExitCode(1, 'solve', config, output_dir=self.path('out'))


class TestEnergy(CommandTestCase):

    def test_matches_the_solve_report(self):
        config = self.write_config()
        self.call('solve', config, output_dir=self.path('out'))
        out = self.call('energy', config, self.path('out', 'u_frame.npy'))
        energy = json.loads(out)
        with open(self.path('out', 'report.json')) as fin:
            reported = json.load(fin)['energy']
        for key in ('E', 'S', 'R'):
            self.assertAlmostEqual(energy[key], reported[key], delta=1e-12 * max(1.0, abs(reported[key])))

        central = json.loads(self.call('energy', config, self.path('out', 'u_frame.npy'), difference='central'))
        self.assertEqual(central['S'], energy['S'])

    def test_shape_mismatch(self):
        config = self.write_config()
        np.save(self.path('u.npy'), np.zeros((3, 5, 6, 2)))
        self.assertExitCode(2, 'energy', config, self.path('u.npy'))
        self.assertExitCode(2, 'energy', config, self.path('missing.npy'))


class TestColorize(CommandTestCase):

    def test_zero_flow_is_white(self):
        write_flo(self.path('zero.flo'), np.zeros((4, 6, 2)))
        self.call('colorize', self.path('zero.flo'), self.path('zero.ppm'))
        with Image.open(self.path('zero.ppm')) as image:
            self.assertEqual(image.size, (6, 4))
            np.testing.assert_array_equal(np.asarray(image), 255)

    def test_directory(self):
        os.makedirs(self.path('flows'))
        for t in range(2):
            write_flo(self.path('flows', 'frame_%04d.flo' % t), np.full((3, 3, 2), t + 1.0))
        self.call('colorize', self.path('flows'), self.path('images'), max_flow=4.0)
        self.assertEqual(sorted(os.listdir(self.path('images'))), ['frame_0000.ppm', 'frame_0001.ppm'])

    def test_empty_directory(self):
        os.makedirs(self.path('flows'))
        self.assertExitCode(2, 'colorize', self.path('flows'), self.path('images'))


class TestCompare(CommandTestCase):

    def write_frames(self, name, frames):
        os.makedirs(self.path(name))
        for t, frame in enumerate(frames):
            write_flo(self.path(name, 'frame_%04d.flo' % t), frame)
        return self.path(name)

    def summary(self):
        with open(self.path('cmp', 'summary.json')) as fin:
            return json.load(fin)

    def test_identical_flows(self):
        frames = np.random.RandomState(0).randn(2, 4, 5, 2)
        a = self.write_frames('a', frames)
        b = self.write_frames('b', frames)
        self.call('compare', a, b, output=self.path('cmp'))
        summary = self.summary()
        self.assertEqual(summary['mode'], 'pullback2d')
        self.assertLess(summary['max_angular'], 1e-6)
        self.assertEqual(summary['max_endpoint'], 0.0)
        self.assertEqual(len(summary['frames']), 2)
        names = set(os.listdir(self.path('cmp')))
        self.assertEqual(names, {'errors.csv', 'summary.json', 'angular_error_0000.ppm', 'angular_error_0001.ppm'})
        with open(self.path('cmp', 'errors.csv')) as fin:
            lines = fin.read().splitlines()
        self.assertEqual(lines[0], 't,i1,i2,angular,endpoint')
        self.assertEqual(len(lines), 1 + 2 * 4 * 5)

    def test_rotated_flow(self):
        angle = np.pi / 5
        a = self.write_frames('a', np.broadcast_to([1.0, 0.0], (1, 3, 3, 2)))
        b = self.write_frames('b', np.broadcast_to([np.cos(angle), np.sin(angle)], (1, 3, 3, 2)))
        self.call('compare', a, b, output=self.path('cmp'))
        self.assertAlmostEqual(self.summary()['mean_angular'], 0.4405, delta=2e-4)
        with Image.open(self.path('cmp', 'angular_error_0000.ppm')) as image:
            self.assertEqual(image.mode, 'RGB')
            pixels = np.asarray(image)
        # 0.4405 of a saturating pi, in all three channels
        np.testing.assert_array_equal(pixels, 36)

    def test_ambient_mode(self):
        frames = np.random.RandomState(1).randn(3, 4, 4, 2)
        a = self.write_frames('a', frames)
        b = self.write_frames('b', 2 * frames)
        self.call('gen_surface', self.path('plane.srf'), kind='flat_plane', nt=3, n1=4, n2=4)
        self.call('compare', a, b, mode='ambient3d', surface=self.path('plane.srf'), output=self.path('cmp'))
        self.call('compare', a, b, output=self.path('flat'))
        with open(self.path('flat', 'summary.json')) as fin:
            flat = json.load(fin)
        summary = self.summary()
        self.assertEqual(summary['mode'], 'ambient3d')
        self.assertAlmostEqual(summary['mean_endpoint'], flat['mean_endpoint'], places=5)
        self.assertAlmostEqual(summary['mean_angular'], flat['mean_angular'], places=5)

    def test_ambient_mode_needs_a_surface(self):
        a = self.write_frames('a', np.zeros((1, 3, 3, 2)))
        self.assertExitCode(1, 'compare', a, a, mode='ambient3d', output=self.path('cmp'))

    def test_different_shapes(self):
        a = self.write_frames('a', np.zeros((1, 3, 3, 2)))
        b = self.write_frames('b', np.zeros((1, 3, 4, 2)))
        self.assertExitCode(2, 'compare', a, b, output=self.path('cmp'))


class TestManage(SimpleTestCase):

    @mock.patch('django.core.management.execute_from_command_line')
    def test_thread_variable_caps_the_backends(self, mock_execute):
        import manage
        with mock.patch.dict(os.environ, {'SURFACE_FLOW_THREADS': '2'}, clear=True):
            manage.main()
            for var in manage.THREAD_VARIABLES:
                self.assertEqual(os.environ[var], '2')
        mock_execute.assert_called_once()

    @mock.patch('django.core.management.execute_from_command_line')
    def test_backends_untouched_without_thread_variable(self, mock_execute):
        import manage
        with mock.patch.dict(os.environ, {}, clear=True):
            manage.main()
            for var in manage.THREAD_VARIABLES:
                self.assertNotIn(var, os.environ)
