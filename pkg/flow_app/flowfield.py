'''
Flow fields in frame, coordinate and ambient form, the discrete energy
and the comparison measures.
'''
import logging
from dataclasses import dataclass

import numpy as np

from helpers.finite_differences import derivative, forward_difference

from flow_app.exceptions import InvalidConfigException, ShapeMismatchException

logger = logging.getLogger(__name__)

ERROR_MODES = ('pullback2d', 'ambient3d')
DIFFERENCES = ('forward', 'central')
DEFAULT_EPSILONS = (1e-3, 1e-4, 1e-5)


@dataclass
class FlowField:
    u_frame: np.ndarray
    u_coord: np.ndarray
    u_ambient: np.ndarray

    @property
    def shape(self):
        return self.u_frame.shape[:3]


@dataclass
class EnergyBreakdown:
    E: float
    S: float
    R: float

    def as_dict(self):
        return {'E': self.E, 'S': self.S, 'R': self.R}


@dataclass
class GradientCheck:
    epsilon: float
    directional: float
    predicted: float
    gap: float


def expand_views(u_frame, frame, surface):
    u_frame = np.asarray(u_frame, dtype=float)
    expected = tuple(surface.shape) + (2,)
    if u_frame.shape != expected or frame.a.shape[:3] != tuple(surface.shape):
        raise ShapeMismatchException('Flow of shape %s does not fit the surface grid %s.'
            % (u_frame.shape, tuple(surface.shape)))
    # u~^l = a^l_m u^m
    u_coord = np.einsum('...m,...ml->...l', u_frame, frame.a)
    return FlowField(u_frame, u_coord, pushforward(u_coord, surface))


def pushforward(u_coord, surface):
    '''
    Tf.u = u~^l d_l f
    '''
    u_coord = np.asarray(u_coord, dtype=float)
    if u_coord.shape != tuple(surface.shape) + (2,):
        raise ShapeMismatchException('Coordinate flow of shape %s does not fit the surface grid %s.'
            % (u_coord.shape, tuple(surface.shape)))
    return np.einsum('...l,l...k->...k', u_coord, surface.df[1:])


def quadrature_weights(geom, alpha=None):
    '''
    Rectangle rule for the volume alpha vol(g) dt dx1 dx2.
    '''
    if alpha is None:
        alpha = geom.alpha
    h_t, h_1, h_2 = geom.steps
    return alpha * geom.vol * h_t * h_1 * h_2


def covariant_derivative(u_frame, frame, conn, alpha, steps, wraps, difference='forward'):
    '''
    Frame components V[..., i, j] of nabla_{X_i} u, i and j over time and
    space, with u^0 = 0:

        V_i^j = abar^l_i d_l u^j + u^k omega^j_ik
    '''
    if difference not in DIFFERENCES:
        raise InvalidConfigException('Unknown difference scheme "%s"; expected one of %s.'
            % (difference, ', '.join(DIFFERENCES)))
    periodic = (False,) + tuple(wraps)
    if difference == 'forward':
        partials = [forward_difference(u_frame, axis, steps[axis], periodic[axis]) for axis in range(3)]
    else:
        partials = [derivative(u_frame, axis, steps[axis], periodic[axis]) for axis in range(3)]

    du = np.zeros(u_frame.shape[:3] + (3, 3))
    du[..., :, 1:] = np.stack(partials, axis=-2)
    abar = frame.extended(alpha)
    return np.einsum('...il,...lj->...ij', abar, du) \
        + np.einsum('...jik,...k->...ij', conn.omega[..., 1:], u_frame)


def discrete_energy(flow, imderiv, geom, frame, conn, alpha, beta, gamma, difference='forward'):
    u = flow.u_frame
    if u.shape[:3] != tuple(geom.shape) or imderiv.shape != tuple(geom.shape):
        raise ShapeMismatchException('Flow %s, image derivatives %s and geometry %s are on different grids.'
            % (u.shape[:3], imderiv.shape, tuple(geom.shape)))
    w = quadrature_weights(geom, alpha)

    constraint = imderiv.dIt + np.einsum('...l,...l->...', imderiv.spatial_gradient(), flow.u_coord)
    S = float(np.sum(constraint ** 2 * w))

    V = covariant_derivative(u, frame, conn, alpha, geom.steps, geom.wraps, difference)
    density = beta * np.sum(u ** 2, axis=-1) + gamma * np.sum(V ** 2, axis=(-2, -1))
    R = float(np.sum(density * w))
    return EnergyBreakdown(S + R, S, R)


def gradient_consistency_check(u_frame, delta_u, energy_fn, operator_residual, weights,
        epsilons=DEFAULT_EPSILONS):
    '''
    Compares the central difference quotient of the energy along delta_u
    with <2 (M u + A), delta_u> under the quadrature weights.

    energy_fn maps frame components to the energy, operator_residual maps
    them to M u + A with the shape of u_frame.
    '''
    u_frame = np.asarray(u_frame, dtype=float)
    delta_u = np.asarray(delta_u, dtype=float)
    if delta_u.shape != u_frame.shape:
        raise ShapeMismatchException('Perturbation of shape %s does not match the flow %s.'
            % (delta_u.shape, u_frame.shape))
    predicted = float(np.sum(2.0 * operator_residual(u_frame) * delta_u * weights[..., None]))

    checks = []
    for epsilon in epsilons:
        directional = (energy_fn(u_frame + epsilon * delta_u) - energy_fn(u_frame - epsilon * delta_u)) \
            / (2.0 * epsilon)
        scale = max(abs(directional), abs(predicted))
        gap = abs(directional - predicted) / scale if scale > 0 else 0.0
        checks.append(GradientCheck(epsilon, directional, predicted, gap))
        logger.debug('epsilon %.0e: directional derivative %.6e, operator %.6e, gap %.3e'
            % (epsilon, directional, predicted, gap))
    return checks


def _check_pair(u, v, mode):
    if mode not in ERROR_MODES:
        raise InvalidConfigException('Unknown comparison mode "%s"; expected one of %s.'
            % (mode, ', '.join(ERROR_MODES)))
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    dims = 2 if mode == 'pullback2d' else 3
    if u.shape != v.shape or u.shape[-1] != dims:
        raise ShapeMismatchException('Cannot compare flows of shapes %s and %s in %s mode.'
            % (u.shape, v.shape, mode))
    return u, v


def angular_error(u, v, mode='pullback2d'):
    '''
    arccos of the normalized dot product of (1, u) and (1, v).
    '''
    u, v = _check_pair(u, v, mode)
    ones = np.ones(u.shape[:-1] + (1,))
    uu = np.concatenate([ones, u], axis=-1)
    vv = np.concatenate([ones, v], axis=-1)
    cosine = np.sum(uu * vv, axis=-1) / (np.linalg.norm(uu, axis=-1) * np.linalg.norm(vv, axis=-1))
    return np.arccos(np.clip(cosine, -1.0, 1.0))


def endpoint_error(u, v, mode='pullback2d'):
    u, v = _check_pair(u, v, mode)
    return np.linalg.norm(u - v, axis=-1)
