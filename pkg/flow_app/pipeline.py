'''
Run configuration and the end-to-end pipeline behind the management
commands: surface and images, geometry, coefficients, assembly, solve
and export.
'''
import os
import json
import time
import logging
from dataclasses import dataclass, field, asdict

import numpy as np
from django.conf import settings

from flow_app.exceptions import InvalidConfigException, ShapeMismatchException
from flow_app.geometry import build_geometry, \
    orthonormal_frame, \
    christoffel_symbols, \
    connection_coefficients, \
    FRAME_DERIVATIVE_OPTIONS
from flow_app.imaging import ImageSequence, \
    load_image_sequence, \
    gaussian_presmooth, \
    image_derivatives, \
    synthetic_sequence
from flow_app.surfaces import surface_spec_from_dict, \
    make_surface, \
    integrate_reparametrization, \
    apply_reparametrization, \
    resample_frames
from flow_app.assembly import BoundarySpec, \
    pde_coefficients, \
    assemble_system, \
    dump_matrix_market
from flow_app.solver import SolverConfig, gmres_solve, save_history
from flow_app.flowfield import expand_views, discrete_energy, quadrature_weights
from flow_app.fileformats import read_srf1, write_flo, write_fl3d

logger = logging.getLogger(__name__)

REPORT_FILENAME = 'report.json'
U_FRAME_FILENAME = 'u_frame.npy'
AMBIENT_FILENAME = 'flow.fl3d'
MATRIX_FILENAME = 'system.mtx'
HISTORY_FILENAME = 'history.csv'

# command line overrides of the solver block
SOLVER_OVERRIDES = ('restart', 'max_iters', 'rel_tol', 'preconditioner', 'deterministic')
# and of the images block
IMAGE_OVERRIDES = ('normalize',)


@dataclass
class RunConfig:
    surface: dict
    images: dict
    alpha: float = None
    beta: float = None
    gamma: float = None
    boundary: str = None
    steps: tuple = None
    sigma_space: float = 0.0
    sigma_time: float = 0.0
    trace_convention: str = None
    time_boundary: str = None
    neumann_connection: bool = True
    frame_derivatives: str = None
    remove_tangential_motion: bool = False
    solver: SolverConfig = None
    output_dir: str = 'out'
    dump_matrix: bool = False
    history: bool = False

    def __post_init__(self):
        defaults = {
            'alpha': settings.DEFAULT_ALPHA,
            'beta': settings.DEFAULT_BETA,
            'gamma': settings.DEFAULT_GAMMA,
            'boundary': settings.DEFAULT_BOUNDARY,
            'trace_convention': settings.DEFAULT_TRACE_CONVENTION,
            'time_boundary': settings.DEFAULT_TIME_BOUNDARY,
            'frame_derivatives': settings.DEFAULT_FRAME_DERIVATIVES,
        }
        for name, value in defaults.items():
            if getattr(self, name) is None:
                setattr(self, name, value)
        if self.solver is None:
            self.solver = SolverConfig()
        elif isinstance(self.solver, dict):
            try:
                self.solver = SolverConfig(**self.solver)
            except TypeError as ex:
                raise InvalidConfigException('Invalid solver block: %s' % ex)
        self.validate()

    def validate(self):
        if not isinstance(self.surface, dict) or not ('kind' in self.surface or 'path' in self.surface):
            raise InvalidConfigException('The surface block needs either "kind" or "path".')
        if not isinstance(self.images, dict) or not ('path' in self.images or 'synthetic' in self.images):
            raise InvalidConfigException('The images block needs either "path" or "synthetic".')
        try:
            self.alpha = float(self.alpha)
            self.beta = float(self.beta)
            self.gamma = float(self.gamma)
            self.sigma_space = float(self.sigma_space)
            self.sigma_time = float(self.sigma_time)
        except (TypeError, ValueError) as ex:
            raise InvalidConfigException('Model parameters must be numbers: %s' % ex)
        if self.alpha <= 0 or self.gamma <= 0:
            raise InvalidConfigException('alpha and gamma must be positive, got %s and %s.'
                % (self.alpha, self.gamma))
        if self.beta < 0:
            raise InvalidConfigException('beta must be non-negative, got %s.' % self.beta)
        if self.sigma_space < 0 or self.sigma_time < 0:
            raise InvalidConfigException('Smoothing widths must be non-negative.')
        if self.steps is not None:
            if len(self.steps) != 3 or min(self.steps) <= 0:
                raise InvalidConfigException('steps must be three positive numbers, got %s.' % (self.steps,))
            self.steps = tuple(float(h) for h in self.steps)
        if self.frame_derivatives not in FRAME_DERIVATIVE_OPTIONS:
            raise InvalidConfigException('Unknown frame derivative option "%s".' % self.frame_derivatives)
        # raises on unknown boundary or time scheme names
        self.boundary_spec()
        if self.beta == 0:
            logger.warning('beta = 0: the system may be ill-conditioned and GMRES may converge slowly')

    def boundary_spec(self):
        return BoundarySpec(self.boundary, self.time_boundary, bool(self.neumann_connection))

    def as_dict(self):
        d = asdict(self)
        if d['steps'] is not None:
            d['steps'] = list(d['steps'])
        return d


def load_run_config(source, overrides=None):
    '''
    source is a path to a JSON document or an already parsed dict.
    Overrides with value None are ignored.
    '''
    if isinstance(source, dict):
        d = dict(source)
    else:
        try:
            with open(source) as fin:
                d = json.load(fin)
        except OSError as ex:
            raise InvalidConfigException('Could not read the run configuration %s: %s' % (source, ex))
        except ValueError as ex:
            raise InvalidConfigException('The run configuration %s is not valid JSON: %s' % (source, ex))

    solver = dict(d.pop('solver', None) or {})
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in SOLVER_OVERRIDES:
            solver[key] = value
        elif key in IMAGE_OVERRIDES:
            d['images'] = dict(d.get('images') or {}, **{key: value})
        else:
            d[key] = value
    d['solver'] = solver
    try:
        return RunConfig(**d)
    except TypeError as ex:
        raise InvalidConfigException('Invalid run configuration: %s' % ex)


def build_surface(config):
    if 'path' in config.surface:
        return read_srf1(config.surface['path'])
    return make_surface(surface_spec_from_dict(config.surface, config.steps))


def prepare_surface(config):
    '''
    Returns the surface the flow lives on and the reparametrization path,
    which is None unless the tangential motion is removed.
    '''
    surface = build_surface(config)
    if not config.remove_tangential_motion:
        return surface, None
    path = integrate_reparametrization(surface)
    return apply_reparametrization(surface, path), path


def build_images(config, surface):
    block = config.images
    if 'synthetic' in block:
        params = dict(block['synthetic'])
        try:
            images = synthetic_sequence(surface.nt, surface.n1, surface.n2,
                wrap1=surface.wrap1, wrap2=surface.wrap2, **params)
        except TypeError as ex:
            raise InvalidConfigException('Invalid synthetic image parameters: %s' % ex)
    else:
        images = load_image_sequence(block['path'], surface.wrap1, surface.wrap2,
            bool(block.get('normalize', False)))
    if images.shape != tuple(surface.shape):
        raise ShapeMismatchException('The images have shape %s but the surface grid is %s.'
            % (images.shape, tuple(surface.shape)))
    return images


@dataclass
class FlowProblem:
    config: RunConfig
    surface: object
    images: ImageSequence
    imderiv: object
    geom: object
    frame: object
    chris: object
    conn: object
    coeffs: object
    bspec: BoundarySpec
    system: object = None
    timings: dict = field(default_factory=dict)

    @property
    def shape(self):
        return tuple(self.surface.shape)

    def weights(self):
        return quadrature_weights(self.geom)

    def flow(self, u_frame):
        return expand_views(u_frame, self.frame, self.surface)

    def energy(self, u_frame, difference='forward'):
        c = self.config
        return discrete_energy(self.flow(u_frame), self.imderiv, self.geom, self.frame, self.conn,
            c.alpha, c.beta, c.gamma, difference)

    def operator_residual(self, u_frame):
        '''
        M u + A on the interior rows, shaped like u_frame.
        '''
        if self.system is None:
            raise InvalidConfigException('The linear system has not been assembled.')
        return self.system.to_field(self.system.residual(u_frame))


def _timed(timings, name, fn, *args, **kwargs):
    started = time.perf_counter()
    result = fn(*args, **kwargs)
    timings[name] = time.perf_counter() - started
    logger.info('%s done in %.2fs' % (name, timings[name]))
    return result


def prepare_problem(config, assemble=True):
    timings = {}
    surface, path = _timed(timings, 'surface', prepare_surface, config)
    bspec = config.boundary_spec()
    bspec.check_wraps(surface.wraps)

    images = build_images(config, surface)
    if path is not None:
        images = ImageSequence(resample_frames(images.values, path, surface.wraps),
            surface.wrap1, surface.wrap2)
    images = gaussian_presmooth(images, config.sigma_space, config.sigma_time)
    imderiv = image_derivatives(images, *surface.steps)

    geom = _timed(timings, 'geometry', build_geometry, surface, config.alpha)
    frame = orthonormal_frame(geom)
    chris = christoffel_symbols(geom, surface)
    conn = connection_coefficients(frame, chris, geom, config.frame_derivatives)
    coeffs = _timed(timings, 'coefficients', pde_coefficients, geom, frame, chris, conn, imderiv,
        config.alpha, config.beta, config.gamma, config.trace_convention)

    system = None
    if assemble:
        system = _timed(timings, 'assembly', assemble_system, coeffs, bspec, *surface.steps,
            frame, conn, surface.wraps)
    logger.info('Prepared a %dx%dx%d problem' % tuple(surface.shape))
    return FlowProblem(config, surface, images, imderiv, geom, frame, chris, conn, coeffs, bspec,
        system, timings)


@dataclass
class SolveOutcome:
    problem: FlowProblem
    u_frame: np.ndarray
    report: object
    energy: object
    output_dir: str


def write_flow_artifacts(output_dir, flow):
    for t in range(flow.u_coord.shape[0]):
        write_flo(os.path.join(output_dir, settings.FLOW_FRAME_TEMPLATE % t), flow.u_coord[t])
    write_fl3d(os.path.join(output_dir, AMBIENT_FILENAME), flow.u_ambient)
    np.save(os.path.join(output_dir, U_FRAME_FILENAME), flow.u_frame)


def run_solve(config):
    problem = prepare_problem(config)
    output_dir = config.output_dir
    os.makedirs(output_dir, exist_ok=True)
    if config.dump_matrix:
        dump_matrix_market(problem.system, os.path.join(output_dir, MATRIX_FILENAME))

    x, report = _timed(problem.timings, 'solve', gmres_solve, problem.system, config.solver)
    if config.history:
        save_history(os.path.join(output_dir, HISTORY_FILENAME), report.history)

    u_frame = problem.system.to_field(x)
    flow = problem.flow(u_frame)
    energy = problem.energy(u_frame)
    write_flow_artifacts(output_dir, flow)

    nt, n1, n2 = problem.shape
    summary = {
        'solver': report.as_dict(),
        'energy': energy.as_dict(),
        'grid': {
            'nt': nt, 'n1': n1, 'n2': n2,
            'steps': list(problem.surface.steps),
            'wraps': list(problem.surface.wraps),
        },
        'timings': problem.timings,
        'config': config.as_dict(),
    }
    with open(os.path.join(output_dir, REPORT_FILENAME), 'w') as fout:
        json.dump(summary, fout, indent=2, default=str)
    logger.info('Wrote the flow of %d frames and %s to %s' % (nt, REPORT_FILENAME, output_dir))
    return SolveOutcome(problem, u_frame, report, energy, output_dir)
