'''
Builtin moving surfaces with exact derivatives and the removal of the
tangential part of a surface's motion.

Builtin surfaces are sympy expressions in t, x1, x2. Their first and
second derivatives are taken symbolically and evaluated on the grid
through lambdify, so the SurfaceGrid carries exact derivatives instead
of finite differences of the samples.
'''
import logging
from dataclasses import dataclass, field

import numpy as np
import sympy
from django.conf import settings
from scipy.ndimage import map_coordinates

from helpers.finite_differences import derivative, second_derivative, mixed_derivative

from flow_app.exceptions import InvalidSpecException, \
    BoundaryViolationException, \
    CFLExceededException, \
    ShapeMismatchException
from flow_app.geometry import SurfaceGrid, surface_from_samples

logger = logging.getLogger(__name__)

SURFACE_KINDS = ('deforming_torus', 'rotating_torus', 'flat_torus', 'flat_plane',
    'graph', 'sphere_chart', 'expression')

T_SYMBOL, X1_SYMBOL, X2_SYMBOL = sympy.symbols('t x1 x2', real=True)
SYMBOLS = (T_SYMBOL, X1_SYMBOL, X2_SYMBOL)

TORUS_DEFAULTS = {
    'R': 2.0,
    'r': 1.0,
    'T': 1.0,
    'ripple_amplitude': 0.2,
    'ripple_frequency': 8,
    'stretch': 1.0,
}

ROTATION_DEFAULTS = {
    'R': 2.0,
    'r': 1.0,
    'T': 1.0,
    'speed': 1.0,
    'acceleration': 0.0,
}

# normal component of the tangential velocity allowed on a non-periodic edge
BOUNDARY_VELOCITY_TOL = 1e-8


@dataclass
class AnalyticSurfaceSpec:
    kind: str
    nt: int
    n1: int
    n2: int
    params: dict = field(default_factory=dict)
    steps: tuple = None

    def __post_init__(self):
        if self.kind not in SURFACE_KINDS:
            raise InvalidSpecException('Unknown surface kind "%s"; expected one of %s.'
                % (self.kind, ', '.join(SURFACE_KINDS)))
        for name in ('nt', 'n1', 'n2'):
            value = getattr(self, name)
            if int(value) != value or value < 2:
                raise InvalidSpecException('Grid size %s must be an integer of at least 2, got %s.'
                    % (name, value))
            setattr(self, name, int(value))
        if self.params is None:
            self.params = {}
        if self.steps is not None:
            if len(self.steps) != 3 or min(self.steps) <= 0:
                raise InvalidSpecException('Grid steps must be three positive numbers, got %s.'
                    % (self.steps,))
            self.steps = tuple(float(h) for h in self.steps)

    @property
    def shape(self):
        return (self.nt, self.n1, self.n2)


@dataclass
class Chart:
    '''
    Closed-form embedding over [0, T] x [x1 range] x [x2 range].
    '''
    f: tuple
    T: float
    x1_range: tuple
    x2_range: tuple
    wrap1: bool
    wrap2: bool


@dataclass
class Reparametrization:
    # grid-index positions phi_k(x) of every node, shape (nt, n1, n2, 2)
    positions: np.ndarray
    max_displacement: float

    def is_identity(self):
        nt, n1, n2 = self.positions.shape[:3]
        identity = np.broadcast_to(_identity_positions(n1, n2), self.positions.shape)
        return np.array_equal(self.positions, identity)


def _param(params, defaults, key):
    try:
        return float(params.get(key, defaults[key]))
    except (TypeError, ValueError):
        raise InvalidSpecException('Surface parameter %s must be a number, got %r.'
            % (key, params.get(key)))


def _parse_expression(text):
    try:
        return sympy.sympify(text, locals={'t': T_SYMBOL, 'x1': X1_SYMBOL, 'x2': X2_SYMBOL})
    except (sympy.SympifyError, TypeError) as ex:
        raise InvalidSpecException('Could not parse the expression %r: %s' % (text, ex))


def _grid_domain(spec, wrap1, wrap2):
    '''
    Default chart in grid units: unit spacing along every axis.
    '''
    length1 = spec.n1 if wrap1 else spec.n1 - 1
    length2 = spec.n2 if wrap2 else spec.n2 - 1
    x1_range = (0.0, float(spec.params.get('length1', length1)))
    x2_range = (0.0, float(spec.params.get('length2', length2)))
    T = float(spec.params.get('T', spec.nt - 1))
    return T, x1_range, x2_range


def _torus_chart(spec):
    p = spec.params
    R = _param(p, TORUS_DEFAULTS, 'R')
    r = _param(p, TORUS_DEFAULTS, 'r')
    T = _param(p, TORUS_DEFAULTS, 'T')
    amplitude = _param(p, TORUS_DEFAULTS, 'ripple_amplitude')
    frequency = _param(p, TORUS_DEFAULTS, 'ripple_frequency')
    stretch = _param(p, TORUS_DEFAULTS, 'stretch')
    t, x1, x2 = SYMBOLS

    # the major circle stretches into an ellipse while the tube ripples
    radius = r + amplitude * (t / T) * sympy.sin(frequency * x1)
    f = ((R + stretch * t / T + radius * sympy.cos(x2)) * sympy.cos(x1),
        (R + radius * sympy.cos(x2)) * sympy.sin(x1),
        radius * sympy.sin(x2))
    return Chart(f, T, (0.0, 2 * np.pi), (0.0, 2 * np.pi), True, True)


def _rotating_torus_chart(spec):
    p = spec.params
    R = _param(p, ROTATION_DEFAULTS, 'R')
    r = _param(p, ROTATION_DEFAULTS, 'r')
    T = _param(p, ROTATION_DEFAULTS, 'T')
    speed = _param(p, ROTATION_DEFAULTS, 'speed')
    acceleration = _param(p, ROTATION_DEFAULTS, 'acceleration')
    t, x1, x2 = SYMBOLS

    angle = speed * t + acceleration * t ** 2 / 2
    f = ((R + r * sympy.cos(x2)) * sympy.cos(x1 + angle),
        (R + r * sympy.cos(x2)) * sympy.sin(x1 + angle),
        r * sympy.sin(x2))
    return Chart(f, T, (0.0, 2 * np.pi), (0.0, 2 * np.pi), True, True)


def _plane_chart(spec, wrap):
    T, x1_range, x2_range = _grid_domain(spec, wrap, wrap)
    _, x1, x2 = SYMBOLS
    return Chart((x1, x2, sympy.Integer(0)), T, x1_range, x2_range, wrap, wrap)


def _default_height(x1_range, x2_range, T, params):
    '''
    A dome in the middle of the chart that rises over time.
    '''
    t, x1, x2 = SYMBOLS
    c1 = 0.5 * (x1_range[0] + x1_range[1])
    c2 = 0.5 * (x2_range[0] + x2_range[1])
    width = float(params.get('width', 0.3 * min(x1_range[1] - x1_range[0], x2_range[1] - x2_range[0])))
    height = float(params.get('height', 0.5 * width))
    growth = float(params.get('growth', 0.5))
    bump = sympy.exp(-((x1 - c1) ** 2 + (x2 - c2) ** 2) / (2 * width ** 2))
    return height * (1 + growth * t / T) * bump


def _graph_chart(spec):
    T, x1_range, x2_range = _grid_domain(spec, False, False)
    _, x1, x2 = SYMBOLS
    if 'z' in spec.params:
        z = _parse_expression(spec.params['z'])
    else:
        z = _default_height(x1_range, x2_range, T, spec.params)
    return Chart((x1, x2, z), T, x1_range, x2_range, False, False)


def _sphere_chart(spec):
    p = spec.params
    radius = float(p.get('radius', 1.0))
    growth = float(p.get('growth', 0.0))
    T = float(p.get('T', 1.0))
    margin = float(p.get('pole_margin', settings.SPHERE_POLE_MARGIN))
    if radius <= 0 or not 0 < margin < np.pi / 2:
        raise InvalidSpecException('The sphere chart needs a positive radius and a pole margin '
            'in (0, pi/2), got %s and %s.' % (radius, margin))
    t, x1, x2 = SYMBOLS

    scale = radius * (1 + growth * t / T)
    f = (scale * sympy.sin(x2) * sympy.cos(x1),
        scale * sympy.sin(x2) * sympy.sin(x1),
        scale * sympy.cos(x2))
    return Chart(f, T, (0.0, 2 * np.pi), (margin, np.pi - margin), True, False)


def _expression_chart(spec):
    p = spec.params
    try:
        components = [_parse_expression(text) for text in p['f']]
        x1_range = tuple(float(x) for x in p['x1_range'])
        x2_range = tuple(float(x) for x in p['x2_range'])
    except KeyError as ex:
        raise InvalidSpecException('Expression surfaces need the parameter %s.' % ex)
    if len(components) != 3:
        raise InvalidSpecException('Expression surfaces need three components, got %d.'
            % len(components))
    T = float(p.get('T', 1.0))
    return Chart(tuple(components), T, x1_range, x2_range,
        bool(p.get('wrap1', False)), bool(p.get('wrap2', False)))


CHART_BUILDERS = {
    'deforming_torus': _torus_chart,
    'rotating_torus': _rotating_torus_chart,
    'flat_torus': lambda spec: _plane_chart(spec, True),
    'flat_plane': lambda spec: _plane_chart(spec, False),
    'graph': _graph_chart,
    'sphere_chart': _sphere_chart,
    'expression': _expression_chart,
}


def _coordinates(spec, chart):
    '''
    Node coordinates and spacings; periodic axes leave out the endpoint.
    '''
    if chart.T <= 0:
        raise InvalidSpecException('The time horizon T must be positive, got %s.' % chart.T)
    t = np.linspace(0.0, chart.T, spec.nt)
    axes = [t]
    spacings = [chart.T / (spec.nt - 1)]
    for (lo, hi), n, periodic in ((chart.x1_range, spec.n1, chart.wrap1),
            (chart.x2_range, spec.n2, chart.wrap2)):
        if not hi > lo:
            raise InvalidSpecException('Empty coordinate range [%s, %s].' % (lo, hi))
        if periodic:
            axes.append(lo + (hi - lo) * np.arange(n) / n)
            spacings.append((hi - lo) / n)
        else:
            axes.append(np.linspace(lo, hi, n))
            spacings.append((hi - lo) / (n - 1))
    return np.meshgrid(*axes, indexing='ij'), tuple(spacings)


def _lambdify(expressions):
    return [sympy.lambdify(SYMBOLS, expr, 'numpy') for expr in expressions]


def _evaluate(functions, grids):
    shape = np.broadcast(*grids).shape
    return np.stack([np.broadcast_to(np.asarray(fn(*grids), dtype=float), shape) for fn in functions],
        axis=-1)


def _rescale(df, d2f, spacings, steps):
    '''
    Derivatives per physical unit become derivatives per chart unit of
    the requested steps.
    '''
    ratio = [spacings[k] / steps[k] for k in range(3)]
    shape = (3,) + (1,) * (df.ndim - 1)
    df = df * np.array(ratio).reshape(shape)
    d2f = d2f * np.array([ratio[1] ** 2, ratio[1] * ratio[2], ratio[2] ** 2]).reshape(shape)
    return df, d2f


class ChartSampler:
    '''
    Evaluates a chart and its derivatives anywhere on the chart, in the
    units of the SurfaceGrid sampled from it.
    '''

    def __init__(self, chart, spacings, steps):
        _, x1, x2 = SYMBOLS
        self.spacings = spacings
        self.steps = steps
        self.origin = (chart.x1_range[0], chart.x2_range[0])
        self._f = _lambdify(chart.f)
        self._df = [_lambdify([sympy.diff(c, s) for c in chart.f]) for s in SYMBOLS]
        self._d2f = [_lambdify([sympy.diff(c, a, b) for c in chart.f])
            for a, b in ((x1, x1), (x1, x2), (x2, x2))]

    def evaluate(self, t, x1, x2):
        grids = (t, x1, x2)
        f = _evaluate(self._f, grids)
        df = np.stack([_evaluate(fns, grids) for fns in self._df])
        d2f = np.stack([_evaluate(fns, grids) for fns in self._d2f])
        return (f,) + _rescale(df, d2f, self.spacings, self.steps)

    def at(self, k, positions):
        '''
        Points and derivatives of frame k at grid-index positions (..., 2).
        '''
        t = np.full(positions.shape[:-1], k * self.spacings[0])
        x1 = self.origin[0] + positions[..., 0] * self.spacings[1]
        x2 = self.origin[1] + positions[..., 1] * self.spacings[2]
        return self.evaluate(t, x1, x2)


def _sampled_graph(spec, grids, spacings):
    '''
    Graph surface over sampled heights; the height derivatives are finite
    differences, the chart part is exact.
    '''
    samples = spec.params['samples']
    if isinstance(samples, str):
        from flow_app.fileformats import read_img1
        samples = read_img1(samples)
    z = np.asarray(samples, dtype=float)
    if z.shape != spec.shape:
        raise ShapeMismatchException('Height samples have shape %s, the grid is %s.'
            % (z.shape, spec.shape))
    h_t, h_1, h_2 = spacings
    zeros = np.zeros(spec.shape)
    ones = np.ones(spec.shape)
    f = np.stack([grids[1], grids[2], z], -1)
    df = np.stack([
        np.stack([zeros, zeros, derivative(z, 0, h_t)], -1),
        np.stack([ones, zeros, derivative(z, 1, h_1)], -1),
        np.stack([zeros, ones, derivative(z, 2, h_2)], -1),
    ])
    d2f = np.stack([
        np.stack([zeros, zeros, second_derivative(z, 1, h_1)], -1),
        np.stack([zeros, zeros, mixed_derivative(z, (1, 2), (h_1, h_2))], -1),
        np.stack([zeros, zeros, second_derivative(z, 2, h_2)], -1),
    ])
    return f, df, d2f


def make_surface(spec):
    chart = CHART_BUILDERS[spec.kind](spec)
    grids, spacings = _coordinates(spec, chart)
    steps = spacings if spec.steps is None else spec.steps

    if spec.kind == 'graph' and 'samples' in spec.params:
        sampler = None
        f, df, d2f = _sampled_graph(spec, grids, spacings)
        df, d2f = _rescale(df, d2f, spacings, steps)
    else:
        sampler = ChartSampler(chart, spacings, steps)
        f, df, d2f = sampler.evaluate(*grids)

    logger.info('Built %s surface on a %dx%dx%d grid with steps %s'
        % (spec.kind, spec.nt, spec.n1, spec.n2, tuple(round(h, 6) for h in steps)))
    return SurfaceGrid(f, df, d2f, steps[0], steps[1], steps[2], chart.wrap1, chart.wrap2, sampler)


def surface_spec_from_dict(d, steps=None):
    '''
    Builds the spec from the "surface" block of a run configuration.
    '''
    try:
        return AnalyticSurfaceSpec(d['kind'], d['nt'], d['n1'], d['n2'],
            dict(d.get('params', {})), d.get('steps', steps))
    except KeyError as ex:
        raise InvalidSpecException('The surface specification is missing %s.' % ex)


###############################################################################
# Removal of the tangential motion
###############################################################################

# periodic cells added on each side of a wrapped axis before spline fitting
WRAP_PADDING = 8

SECOND_DERIVATIVE_PAIRS = ((0, 0), (0, 1), (1, 1))


def _tangential(df):
    d = df[1:]
    g = np.einsum('a...k,b...k->...ab', d, d)
    projections = np.einsum('...k,a...k->...a', df[0], d)
    return np.einsum('...ab,...b->...a', np.linalg.inv(g), projections)


def tangential_velocity(surface):
    '''
    Coordinate components g^{lm} <f_t, d_m f> of the tangential part of
    the surface velocity, in chart units per unit time.
    '''
    return _tangential(surface.df)


def residual_tangential_speed(surface):
    '''
    Largest tangential coordinate speed over the inner frames. The first
    and last frames are left out, their time derivatives are one-sided.
    '''
    velocity = tangential_velocity(surface)
    if surface.nt > 2:
        velocity = velocity[1:-1]
    return float(np.abs(velocity).max())


def _identity_positions(n1, n2):
    i1, i2 = np.meshgrid(np.arange(n1, dtype=float), np.arange(n2, dtype=float), indexing='ij')
    return np.stack([i1, i2], -1)


def _check_boundary_velocity(velocity, wraps):
    edges = (velocity[:, [0, -1], :, 0], velocity[:, :, [0, -1], 1])
    for axis, periodic in enumerate(wraps):
        if periodic:
            continue
        normal = np.abs(edges[axis])
        if normal.max() > BOUNDARY_VELOCITY_TOL:
            index = list(np.unravel_index(np.argmax(normal), normal.shape))
            if index[1 + axis] == 1:
                index[1 + axis] = velocity.shape[1 + axis] - 1
            raise BoundaryViolationException('The tangential motion leaves the chart across an '
                'x%d edge.' % (axis + 1), grid_index=index)


def _sample(values, positions, wraps):
    '''
    Cubic spline interpolation of a (n1, n2, ...) field at grid-index
    positions.
    '''
    n1, n2 = values.shape[:2]
    coords = positions.copy()
    pad = []
    for axis, (n, periodic) in enumerate(zip((n1, n2), wraps)):
        if periodic:
            coords[..., axis] = np.mod(coords[..., axis], n) + WRAP_PADDING
            pad.append((WRAP_PADDING, WRAP_PADDING))
        else:
            pad.append((0, 0))
    padded = np.pad(values, pad + [(0, 0)] * (values.ndim - 2), mode='wrap')
    trailing = values.shape[2:]
    flat = padded.reshape(padded.shape[:2] + (-1,))
    out = np.stack([map_coordinates(flat[..., c], np.moveaxis(coords, -1, 0), order=3, mode='nearest')
        for c in range(flat.shape[-1])], -1)
    return out.reshape(positions.shape[:-1] + trailing)


def _check_inside(positions, shape, wraps, k):
    for axis, (n, periodic) in enumerate(zip(shape, wraps)):
        if periodic:
            continue
        outside = (positions[..., axis] < 0) | (positions[..., axis] > n - 1)
        if np.any(outside):
            index = np.argwhere(outside)[0]
            raise BoundaryViolationException('The reparametrization left the chart along x%d.'
                % (axis + 1), grid_index=(k,) + tuple(index))


def _check_cfl(displacement, cfl, k):
    cells = np.abs(displacement).max()
    if cells > cfl:
        raise CFLExceededException('The tangential motion moves %.3g grid cells in one time step; '
            'at most %.3g are allowed. Use more frames.' % (cells, cfl), grid_index=(k,))


def _displacement_function(surface, scale):
    '''
    Grid cells travelled per time step by a node of frame k at the given
    positions. Charts give the exact tangential velocity there, sampled
    surfaces interpolate it.
    '''
    if surface.sampler is not None:
        def displacement(k, positions):
            _, df, _ = surface.sampler.at(k, positions)
            return -_tangential(df) * scale
        return displacement

    grid = -tangential_velocity(surface) * scale
    return lambda k, positions: _sample(grid[k], positions, surface.wraps)


def integrate_reparametrization(surface, cfl=None):
    '''
    Integrates phi_t = -V o phi with Heun steps, where V is the tangential
    velocity, starting from the identity. Positions are grid indices.
    '''
    if cfl is None:
        cfl = settings.REPARAMETRIZATION_CFL
    _check_boundary_velocity(tangential_velocity(surface), surface.wraps)

    nt, n1, n2 = surface.shape
    scale = np.array([surface.h_t / surface.h_1, surface.h_t / surface.h_2])
    displacement = _displacement_function(surface, scale)

    positions = np.empty((nt, n1, n2, 2))
    positions[0] = _identity_positions(n1, n2)
    largest = 0.0
    for k in range(nt - 1):
        k1 = displacement(k, positions[k])
        _check_cfl(k1, cfl, k)
        predicted = positions[k] + k1
        _check_inside(predicted, (n1, n2), surface.wraps, k + 1)
        k2 = displacement(k + 1, predicted)
        _check_cfl(k2, cfl, k + 1)
        largest = max(largest, np.abs(k1).max(), np.abs(k2).max())
        positions[k + 1] = positions[k] + 0.5 * (k1 + k2)
        _check_inside(positions[k + 1], (n1, n2), surface.wraps, k + 1)

    logger.info('Reparametrization path: largest step %.3g cells' % largest)
    return Reparametrization(positions, largest)


def resample_frames(values, path, wraps):
    '''
    values[k] is sampled at the positions of frame k.
    '''
    values = np.asarray(values, dtype=float)
    if values.shape[:3] != path.positions.shape[:3]:
        raise ShapeMismatchException('Cannot resample fields of shape %s along a path over %s.'
            % (values.shape, path.positions.shape[:3]))
    return np.stack([_sample(values[k], path.positions[k], wraps) for k in range(values.shape[0])])


def _push(G, w):
    return G[0] * w[..., 0, None] + G[1] * w[..., 1, None]


def _compose_chart(surface, path):
    '''
    The chart composed with the path. Points and chart derivatives are
    evaluated at the path positions; only the derivatives of the path
    itself are finite differences.
    '''
    nt, n1, n2 = surface.shape
    h = (surface.h_1, surface.h_2)
    # periodic along wrapped axes, unlike the positions
    offset = path.positions - _identity_positions(n1, n2)
    speed = derivative(offset, 0, 1.0)
    jacobian = [np.eye(2)[m] + derivative(offset, 1 + m, 1.0, surface.wraps[m]) for m in range(2)]
    hessian = [
        second_derivative(offset, 1, 1.0, surface.wrap1),
        mixed_derivative(offset, (1, 2), (1.0, 1.0), surface.wraps),
        second_derivative(offset, 2, 1.0, surface.wrap2),
    ]

    f = np.empty(surface.f.shape)
    df = np.empty(surface.df.shape)
    d2f = np.empty(surface.d2f.shape)
    for k in range(nt):
        f[k], dF, d2F = surface.sampler.at(k, path.positions[k])
        # chart derivatives per grid index
        G = (dF[1] * h[0], dF[2] * h[1])
        G2 = ((d2F[0] * h[0] * h[0], d2F[1] * h[0] * h[1]),
            (d2F[1] * h[0] * h[1], d2F[2] * h[1] * h[1]))
        J = (jacobian[0][k], jacobian[1][k])

        df[0, k] = dF[0] + _push(G, speed[k]) / surface.h_t
        for m in range(2):
            df[1 + m, k] = _push(G, J[m]) / h[m]
        for index, (m, n) in enumerate(SECOND_DERIVATIVE_PAIRS):
            second = _push(G, hessian[index][k])
            for a in range(2):
                for b in range(2):
                    second = second + G2[a][b] * (J[m][..., a] * J[n][..., b])[..., None]
            d2f[index, k] = second / (h[m] * h[n])
    return SurfaceGrid(f, df, d2f, surface.h_t, surface.h_1, surface.h_2, surface.wrap1, surface.wrap2)


def apply_reparametrization(surface, path):
    if path.is_identity():
        return surface
    if surface.sampler is not None:
        out = _compose_chart(surface, path)
    else:
        out = surface_from_samples(resample_frames(surface.f, path, surface.wraps),
            surface.steps, surface.wraps)
    logger.info('Residual tangential speed after reparametrization: %.3g (was %.3g)'
        % (residual_tangential_speed(out), residual_tangential_speed(surface)))
    return out


def remove_tangential_motion(surface, cfl=None):
    path = integrate_reparametrization(surface, cfl)
    return apply_reparametrization(surface, path)
