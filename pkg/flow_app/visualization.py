'''
Colour coding of planar flow (the Middlebury colour wheel) and grey-scale
error maps.
'''
import numpy as np
from django.conf import settings

from flow_app.exceptions import ShapeMismatchException

# number of hues between the primary and secondary colours of the wheel
RY = 15
YG = 6
GC = 4
CB = 11
BM = 13
MR = 6


def make_color_wheel():
    ncols = RY + YG + GC + CB + BM + MR
    wheel = np.zeros((ncols, 3))
    col = 0

    wheel[0:RY, 0] = 255
    wheel[0:RY, 1] = np.floor(255 * np.arange(RY) / RY)
    col += RY

    wheel[col:col + YG, 0] = 255 - np.floor(255 * np.arange(YG) / YG)
    wheel[col:col + YG, 1] = 255
    col += YG

    wheel[col:col + GC, 1] = 255
    wheel[col:col + GC, 2] = np.floor(255 * np.arange(GC) / GC)
    col += GC

    wheel[col:col + CB, 1] = 255 - np.floor(255 * np.arange(CB) / CB)
    wheel[col:col + CB, 2] = 255
    col += CB

    wheel[col:col + BM, 2] = 255
    wheel[col:col + BM, 0] = np.floor(255 * np.arange(BM) / BM)
    col += BM

    wheel[col:col + MR, 2] = 255 - np.floor(255 * np.arange(MR) / MR)
    wheel[col:col + MR, 0] = 255
    return wheel


def flow_to_color(flow, max_flow=None, percentile=None):
    '''
    flow has shape (n1, n2, 2). Hue encodes the direction, saturation the
    magnitude relative to max_flow, by default the given percentile of the
    magnitudes. Magnitudes above it are darkened.
    '''
    flow = np.asarray(flow, dtype=float)
    if flow.ndim != 3 or flow.shape[-1] != 2:
        raise ShapeMismatchException('Flow frames have shape (n1, n2, 2), got %s.' % (flow.shape,))
    if percentile is None:
        percentile = settings.COLOR_WHEEL_PERCENTILE
    u = np.nan_to_num(flow[..., 0])
    v = np.nan_to_num(flow[..., 1])

    rad = np.sqrt(u ** 2 + v ** 2)
    if max_flow is None:
        max_flow = np.percentile(rad, percentile)
    if not max_flow > 0:
        max_flow = 1.0
    u = u / max_flow
    v = v / max_flow
    rad = rad / max_flow

    wheel = make_color_wheel()
    ncols = wheel.shape[0]
    a = np.arctan2(-v, -u) / np.pi
    fk = (a + 1) / 2 * (ncols - 1)
    k0 = np.floor(fk).astype(int)
    k1 = k0 + 1
    k1[k1 == ncols] = 0
    f = fk - k0

    image = np.zeros(flow.shape[:2] + (3,), dtype=np.uint8)
    inside = rad <= 1
    for i in range(3):
        col0 = wheel[k0, i] / 255.0
        col1 = wheel[k1, i] / 255.0
        col = (1 - f) * col0 + f * col1
        col[inside] = 1 - rad[inside] * (1 - col[inside])
        col[~inside] *= 0.75
        image[..., i] = np.floor(255 * col)
    return image


def error_map(errors, max_value=np.pi):
    '''
    Grey levels proportional to the error, saturating at max_value.
    '''
    errors = np.asarray(errors, dtype=float)
    scaled = np.clip(errors / max_value, 0.0, 1.0)
    return np.round(255 * scaled).astype(np.uint8)
