'''
Finite-difference stencils on regular space-time grids.

All derivatives are second order: central in the interior and across
periodic wraps, one-sided second order at the ends of non-periodic axes.
The functions accept arrays with arbitrary trailing dimensions, so vector
and tensor fields are differentiated component-wise.
'''
import numpy as np

from flow_app.exceptions import GridTooSmallException


def check_axis_length(n, periodic, name='axis'):
    '''
    Non-periodic axes need three points for the one-sided
    second-order stencils at their ends.
    '''
    if not periodic and n < 3:
        raise GridTooSmallException('The %s has %d points; at least 3 are required '
            'along a non-periodic axis.' % (name, n))


def derivative(values, axis, step, periodic=False):
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    if periodic:
        return (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (2.0 * step)
    check_axis_length(n, periodic)

    # written in differences so that constants give exactly zero
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * step)
    out[0] = (4.0 * (v[1] - v[0]) - (v[2] - v[0])) / (2.0 * step)
    out[-1] = (4.0 * (v[-1] - v[-2]) - (v[-1] - v[-3])) / (2.0 * step)
    return np.moveaxis(out, 0, axis)


def second_derivative(values, axis, step, periodic=False):
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    h2 = step * step
    if periodic:
        return ((np.roll(values, -1, axis=axis) - values) - (values - np.roll(values, 1, axis=axis))) / h2
    check_axis_length(n, periodic)

    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = ((v[2:] - v[1:-1]) - (v[1:-1] - v[:-2])) / h2
    if n == 3:
        # the only quadratic through three points
        out[0] = out[1]
        out[-1] = out[1]
    else:
        out[0] = (-5.0 * (v[1] - v[0]) + 4.0 * (v[2] - v[0]) - (v[3] - v[0])) / h2
        out[-1] = (-5.0 * (v[-2] - v[-1]) + 4.0 * (v[-3] - v[-1]) - (v[-4] - v[-1])) / h2
    return np.moveaxis(out, 0, axis)


def mixed_derivative(values, axes, steps, periodic=(False, False)):
    '''
    Derivative along axes[0] then axes[1]; in the interior this is the
    symmetric 4-point cross stencil.
    '''
    first = derivative(values, axes[0], steps[0], periodic[0])
    return derivative(first, axes[1], steps[1], periodic[1])


def forward_difference(values, axis, step, periodic=False):
    '''
    Forward differences; the last node of a non-periodic axis reuses the
    backward difference.
    '''
    values = np.asarray(values, dtype=float)
    if periodic:
        return (np.roll(values, -1, axis=axis) - values) / step
    n = values.shape[axis]
    if n < 2:
        raise GridTooSmallException('Forward differences need at least 2 points, got %d.' % n)
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[:-1] = (v[1:] - v[:-1]) / step
    out[-1] = out[-2]
    return np.moveaxis(out, 0, axis)


def first_derivative_stencil(n, step, periodic=False):
    '''
    Returns the offsets and weights of the first-derivative stencil used
    at every index of an axis of length n, as two arrays of shape (n, 3).
    Periodic offsets are not wrapped here; callers reduce modulo n.
    '''
    offsets = np.tile(np.array([-1, 0, 1]), (n, 1))
    weights = np.tile(np.array([-1.0, 0.0, 1.0]) / (2.0 * step), (n, 1))
    if not periodic:
        check_axis_length(n, periodic)
        offsets[0] = [0, 1, 2]
        weights[0] = np.array([-3.0, 4.0, -1.0]) / (2.0 * step)
        offsets[-1] = [-2, -1, 0]
        weights[-1] = np.array([1.0, -4.0, 3.0]) / (2.0 * step)
    return offsets, weights
