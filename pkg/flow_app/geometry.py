'''
Differential geometry of the almost-product metric on [0,T] x M.

Array conventions (all arrays are indexed [t][x1][x2] first):

- SurfaceGrid.f has shape (nt, n1, n2, 3); df stacks the derivatives
  along t, x1, x2 and has shape (3, nt, n1, n2, 3); d2f stacks the second
  spatial derivatives 11, 12, 22 in the same way.
- Space-time indices run over 0 (time), 1 and 2. The block metric is
  diag(alpha^2, g).
- Frame matrices are stored row = frame index, column = coordinate index,
  so frame.a[..., i, l] is the l-th coordinate component of X_i and
  frame.b[..., k, j] is the X_j-component of the k-th coordinate vector.
- gamma[..., j, i, k] and omega[..., j, i, k] carry the upper index first.
'''
import logging
from dataclasses import dataclass, field

import numpy as np
from django.conf import settings

from helpers.finite_differences import derivative, second_derivative, mixed_derivative

from flow_app.exceptions import DegenerateMetricException, \
    InvalidConfigException, \
    InvalidSpecException, \
    ShapeMismatchException

logger = logging.getLogger(__name__)

FRAME_DERIVATIVE_OPTIONS = ('central', 'metric')

# position of the second derivative d_i d_j f inside SurfaceGrid.d2f
SECOND_DERIVATIVE_INDEX = {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 2}


def _dot(x, y):
    return np.einsum('...k,...k->...', x, y)


@dataclass
class SurfaceGrid:
    f: np.ndarray
    df: np.ndarray
    d2f: np.ndarray
    h_t: float = 1.0
    h_1: float = 1.0
    h_2: float = 1.0
    wrap1: bool = False
    wrap2: bool = False
    # evaluates the generating chart off the grid; None for sampled surfaces
    sampler: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        self.df = np.asarray(self.df, dtype=float)
        self.d2f = np.asarray(self.d2f, dtype=float)
        if self.f.ndim != 4 or self.f.shape[-1] != 3:
            raise ShapeMismatchException('Surface samples must have shape (nt, n1, n2, 3), '
                'got %s.' % (self.f.shape,))
        expected = (3,) + self.f.shape
        if self.df.shape != expected or self.d2f.shape != expected:
            raise ShapeMismatchException('Surface derivative arrays must have shape %s.' % (expected,))
        if min(self.h_t, self.h_1, self.h_2) <= 0:
            raise InvalidSpecException('Grid steps must be positive, got %s.' % (self.steps,))
        self.wrap1 = bool(self.wrap1)
        self.wrap2 = bool(self.wrap2)

    @property
    def shape(self):
        return self.f.shape[:3]

    @property
    def nt(self):
        return self.f.shape[0]

    @property
    def n1(self):
        return self.f.shape[1]

    @property
    def n2(self):
        return self.f.shape[2]

    @property
    def steps(self):
        return (self.h_t, self.h_1, self.h_2)

    @property
    def wraps(self):
        return (self.wrap1, self.wrap2)


def surface_from_samples(f, steps=(1.0, 1.0, 1.0), wraps=(False, False)):
    '''
    Builds a SurfaceGrid from sampled points only, recovering first and
    second derivatives by finite differences.
    '''
    f = np.asarray(f, dtype=float)
    h_t, h_1, h_2 = steps
    wrap1, wrap2 = wraps
    df = np.stack([
        derivative(f, 0, h_t),
        derivative(f, 1, h_1, wrap1),
        derivative(f, 2, h_2, wrap2),
    ])
    d2f = np.stack([
        second_derivative(f, 1, h_1, wrap1),
        mixed_derivative(f, (1, 2), (h_1, h_2), (wrap1, wrap2)),
        second_derivative(f, 2, h_2, wrap2),
    ])
    return SurfaceGrid(f, df, d2f, h_t, h_1, h_2, wrap1, wrap2)


@dataclass
class GeometryField:
    alpha: float
    g: np.ndarray
    ginv: np.ndarray
    vol: np.ndarray
    dtg: np.ndarray
    det: np.ndarray
    h_t: float = 1.0
    h_1: float = 1.0
    h_2: float = 1.0
    wrap1: bool = False
    wrap2: bool = False

    @property
    def shape(self):
        return self.vol.shape

    @property
    def steps(self):
        return (self.h_t, self.h_1, self.h_2)

    @property
    def wraps(self):
        return (self.wrap1, self.wrap2)

    def block_metric(self):
        gbar = np.zeros(self.shape + (3, 3))
        gbar[..., 0, 0] = self.alpha ** 2
        gbar[..., 1:, 1:] = self.g
        return gbar

    def block_inverse(self):
        gbar_inv = np.zeros(self.shape + (3, 3))
        gbar_inv[..., 0, 0] = 1.0 / self.alpha ** 2
        gbar_inv[..., 1:, 1:] = self.ginv
        return gbar_inv


@dataclass
class FrameField:
    a: np.ndarray
    b: np.ndarray

    def extended(self, alpha):
        '''
        The 3x3 frame matrix of the space-time frame, with X_0 = d_t / alpha.
        '''
        abar = np.zeros(self.a.shape[:-2] + (3, 3))
        abar[..., 0, 0] = 1.0 / alpha
        abar[..., 1:, 1:] = self.a
        return abar


@dataclass
class ChristoffelField:
    gamma: np.ndarray
    # metric_partials[..., m, k, l] = d_l gbar_mk
    metric_partials: np.ndarray


@dataclass
class ConnectionField:
    omega: np.ndarray
    # frame_partials[..., l, i, m] = d_l abar[i, m]
    frame_partials: np.ndarray


def build_geometry(surface, alpha, threshold=None):
    if alpha <= 0:
        raise InvalidConfigException('The time weighting alpha must be positive, got %s.' % alpha)
    if threshold is None:
        threshold = settings.DEGENERACY_THRESHOLD

    d1 = surface.df[1]
    d2 = surface.df[2]
    g11 = _dot(d1, d1)
    g12 = _dot(d1, d2)
    g22 = _dot(d2, d2)
    det = g11 * g22 - g12 * g12

    bad = np.argwhere(~(det > threshold))
    if len(bad) > 0:
        raise DegenerateMetricException('The metric is degenerate: det g = %g is not above %g.'
            % (det[tuple(bad[0])], threshold), grid_index=bad[0])

    g = np.stack([np.stack([g11, g12], -1), np.stack([g12, g22], -1)], -2)
    ginv = np.stack([np.stack([g22, -g12], -1), np.stack([-g12, g11], -1)], -2) / det[..., None, None]
    vol = np.sqrt(det)

    # d_t d_i f from central time differences of the stored d_i f
    dt_d1 = derivative(d1, 0, surface.h_t)
    dt_d2 = derivative(d2, 0, surface.h_t)
    dtg11 = 2.0 * _dot(dt_d1, d1)
    dtg12 = _dot(dt_d1, d2) + _dot(d1, dt_d2)
    dtg22 = 2.0 * _dot(dt_d2, d2)
    dtg = np.stack([np.stack([dtg11, dtg12], -1), np.stack([dtg12, dtg22], -1)], -2)

    return GeometryField(alpha, g, ginv, vol, dtg, det,
        surface.h_t, surface.h_1, surface.h_2, surface.wrap1, surface.wrap2)


def orthonormal_frame(geom):
    '''
    Gram--Schmidt on (d_1, d_2), in this order:
    X_1 = d_1 / |d_1|,  X_2 = (d_2 - (g12/g11) d_1) / |...|.
    '''
    g11 = geom.g[..., 0, 0]
    g12 = geom.g[..., 0, 1]
    if np.any(g11 <= 0):
        index = np.argwhere(g11 <= 0)[0]
        raise DegenerateMetricException('The first coordinate vector vanishes.', grid_index=index)
    norm2 = np.sqrt(geom.det / g11)

    a = np.zeros(geom.shape + (2, 2))
    a[..., 0, 0] = 1.0 / np.sqrt(g11)
    a[..., 1, 0] = -(g12 / g11) / norm2
    a[..., 1, 1] = 1.0 / norm2

    b = np.zeros_like(a)
    b[..., 0, 0] = 1.0 / a[..., 0, 0]
    b[..., 1, 0] = -a[..., 1, 0] / (a[..., 0, 0] * a[..., 1, 1])
    b[..., 1, 1] = 1.0 / a[..., 1, 1]
    return FrameField(a, b)


def metric_partials(geom, surface):
    '''
    d_l gbar_mk for l, m, k in {0, 1, 2}. Spatial partials come from the
    stored second derivatives, d_l g_ij = <f_il, f_j> + <f_i, f_jl>; the
    time partials are geom.dtg. The alpha^2 entry is constant.
    '''
    first = (surface.df[1], surface.df[2])
    dg = np.zeros(geom.shape + (3, 3, 3))
    dg[..., 1:, 1:, 0] = geom.dtg
    for l in range(2):
        for i in range(2):
            for j in range(i, 2):
                value = _dot(surface.d2f[SECOND_DERIVATIVE_INDEX[(i, l)]], first[j]) \
                    + _dot(first[i], surface.d2f[SECOND_DERIVATIVE_INDEX[(j, l)]])
                dg[..., 1 + i, 1 + j, 1 + l] = value
                dg[..., 1 + j, 1 + i, 1 + l] = value
    return dg


def christoffel_symbols(geom, surface):
    if tuple(geom.shape) != tuple(surface.shape):
        raise ShapeMismatchException('Geometry grid %s does not match surface grid %s.'
            % (geom.shape, surface.shape))
    dg = metric_partials(geom, surface)

    # first kind: 1/2 (d_l g_mk + d_k g_ml - d_m g_kl), indexed [m, k, l]
    first_kind = 0.5 * (dg + np.swapaxes(dg, -1, -2) - np.moveaxis(dg, -1, -3))
    gamma = np.einsum('...im,...mkl->...ikl', geom.block_inverse(), first_kind)
    # symmetric in the lower indices bit for bit
    gamma = 0.5 * (gamma + np.swapaxes(gamma, -1, -2))
    return ChristoffelField(gamma, dg)


def _frame_partials_by_differences(frame, geom):
    partials = np.zeros(geom.shape + (3, 3, 3))
    periodic = (False,) + geom.wraps
    for axis in range(3):
        partials[..., axis, 1:, 1:] = derivative(frame.a, axis, geom.steps[axis], periodic[axis])
    return partials


def _frame_partials_from_metric(geom, dg):
    '''
    Chain rule through the Gram--Schmidt formulas, using the same metric
    partials as the Christoffel symbols.
    '''
    g11 = geom.g[..., 0, 0]
    g12 = geom.g[..., 0, 1]
    norm2 = np.sqrt(geom.det / g11)
    ratio = g12 / g11

    partials = np.zeros(geom.shape + (3, 3, 3))
    for l in range(3):
        d11 = dg[..., 1, 1, l]
        d12 = dg[..., 1, 2, l]
        d22 = dg[..., 2, 2, l]
        d_norm2_sq = d22 - 2.0 * g12 * d12 / g11 + g12 ** 2 * d11 / g11 ** 2
        d_norm2 = d_norm2_sq / (2.0 * norm2)
        d_ratio = (d12 * g11 - g12 * d11) / g11 ** 2
        partials[..., l, 1, 1] = -0.5 * d11 / g11 ** 1.5
        partials[..., l, 2, 1] = -d_ratio / norm2 + ratio * d_norm2 / norm2 ** 2
        partials[..., l, 2, 2] = -d_norm2 / norm2 ** 2
    return partials


def connection_coefficients(frame, chris, geom, frame_derivatives=None):
    '''
    omega^j_ik = (abar^l_i d_l abar^m_k + abar^l_i abar^n_k Gamma^m_ln) abar^h_j gbar_mh
    '''
    if frame_derivatives is None:
        frame_derivatives = settings.DEFAULT_FRAME_DERIVATIVES
    if frame_derivatives not in FRAME_DERIVATIVE_OPTIONS:
        raise InvalidConfigException('Unknown frame derivative option "%s"; expected one of %s.'
            % (frame_derivatives, ', '.join(FRAME_DERIVATIVE_OPTIONS)))

    if frame_derivatives == 'metric':
        dabar = _frame_partials_from_metric(geom, chris.metric_partials)
    else:
        dabar = _frame_partials_by_differences(frame, geom)

    abar = frame.extended(geom.alpha)
    covariant = np.einsum('...il,...lkm->...ikm', abar, dabar) \
        + np.einsum('...il,...kn,...mln->...ikm', abar, abar, chris.gamma, optimize=True)
    omega = np.einsum('...ikm,...jh,...mh->...jik', covariant, abar, geom.block_metric(), optimize=True)
    return ConnectionField(omega, dabar)
