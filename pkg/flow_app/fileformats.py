'''
Binary formats used by the commands.

SRF1  sampled surface: magic, <i4 nt n1 n2, u1 wrap1 wrap2, <f8 h_t h_1 h_2,
      then <f8 points [t][x1][x2][xyz]. Derivatives are recomputed on load.
IMG1  raw image stack: magic, <i4 nt n1 n2, then <f4 values [t][x1][x2].
.flo  Middlebury flow: <f4 202021.25, <i4 width height, then <f4 pairs
      row-major. Width runs along x2 and height along x1.
FL3D  ambient flow: magic, <i4 nt n1 n2, then <f4 triples [t][x1][x2][xyz].
'''
import logging

import numpy as np
from PIL import Image

from flow_app.exceptions import FormatException, ShapeMismatchException
from flow_app.geometry import surface_from_samples

logger = logging.getLogger(__name__)

SRF1_MAGIC = b'SRF1'
IMG1_MAGIC = b'IMG1'
FL3D_MAGIC = b'FL3D'
FLO_MAGIC = 202021.25

SRF1_HEADER = np.dtype([
    ('magic', 'S4'),
    ('nt', '<i4'), ('n1', '<i4'), ('n2', '<i4'),
    ('wrap1', 'u1'), ('wrap2', 'u1'),
    ('h_t', '<f8'), ('h_1', '<f8'), ('h_2', '<f8'),
])

STACK_HEADER = np.dtype([
    ('magic', 'S4'),
    ('nt', '<i4'), ('n1', '<i4'), ('n2', '<i4'),
])

FLO_HEADER = np.dtype([
    ('magic', '<f4'),
    ('width', '<i4'), ('height', '<i4'),
])


def _read_bytes(path):
    try:
        with open(path, 'rb') as fin:
            return fin.read()
    except OSError as ex:
        raise FormatException('Could not read %s: %s' % (path, ex))


def _parse_header(raw, dtype, path):
    if len(raw) < dtype.itemsize:
        raise FormatException('%s is too short to hold a header.' % path)
    return np.frombuffer(raw, dtype=dtype, count=1)[0]


def _payload(raw, header_dtype, value_dtype, count, path):
    expected = header_dtype.itemsize + count * np.dtype(value_dtype).itemsize
    if len(raw) != expected:
        raise FormatException('%s holds %d bytes but its header announces %d.'
            % (path, len(raw), expected))
    return np.frombuffer(raw, dtype=value_dtype, count=count, offset=header_dtype.itemsize)


def write_srf1(path, surface):
    header = np.zeros(1, dtype=SRF1_HEADER)
    header['magic'] = SRF1_MAGIC
    header['nt'], header['n1'], header['n2'] = surface.shape
    header['wrap1'], header['wrap2'] = surface.wraps
    header['h_t'], header['h_1'], header['h_2'] = surface.steps
    with open(path, 'wb') as fout:
        fout.write(header.tobytes())
        fout.write(np.ascontiguousarray(surface.f, dtype='<f8').tobytes())


def read_srf1(path):
    raw = _read_bytes(path)
    header = _parse_header(raw, SRF1_HEADER, path)
    if header['magic'] != SRF1_MAGIC:
        raise FormatException('%s is not an SRF1 surface file.' % path)
    shape = (int(header['nt']), int(header['n1']), int(header['n2']))
    if min(shape) <= 0:
        raise FormatException('%s announces an empty grid %s.' % (path, shape))
    points = _payload(raw, SRF1_HEADER, '<f8', int(np.prod(shape)) * 3, path)
    f = points.reshape(shape + (3,)).astype(float)
    steps = (float(header['h_t']), float(header['h_1']), float(header['h_2']))
    wraps = (bool(header['wrap1']), bool(header['wrap2']))
    logger.info('Read SRF1 surface %s with grid %s' % (path, shape))
    return surface_from_samples(f, steps, wraps)


def _write_stack(path, magic, values):
    values = np.asarray(values)
    header = np.zeros(1, dtype=STACK_HEADER)
    header['magic'] = magic
    header['nt'], header['n1'], header['n2'] = values.shape[:3]
    with open(path, 'wb') as fout:
        fout.write(header.tobytes())
        fout.write(np.ascontiguousarray(values, dtype='<f4').tobytes())


def _read_stack(path, magic, trailing=()):
    raw = _read_bytes(path)
    header = _parse_header(raw, STACK_HEADER, path)
    if header['magic'] != magic:
        raise FormatException('%s does not start with %s.' % (path, magic.decode()))
    shape = (int(header['nt']), int(header['n1']), int(header['n2'])) + tuple(trailing)
    values = _payload(raw, STACK_HEADER, '<f4', int(np.prod(shape)), path)
    return values.reshape(shape).astype(np.float32)


def write_img1(path, values):
    values = np.asarray(values)
    if values.ndim != 3:
        raise ShapeMismatchException('IMG1 stacks have shape (nt, n1, n2), got %s.' % (values.shape,))
    _write_stack(path, IMG1_MAGIC, values)


def read_img1(path):
    return _read_stack(path, IMG1_MAGIC)


def write_fl3d(path, u_ambient):
    u_ambient = np.asarray(u_ambient)
    if u_ambient.ndim != 4 or u_ambient.shape[-1] != 3:
        raise ShapeMismatchException('FL3D flows have shape (nt, n1, n2, 3), got %s.'
            % (u_ambient.shape,))
    _write_stack(path, FL3D_MAGIC, u_ambient)


def read_fl3d(path):
    return _read_stack(path, FL3D_MAGIC, trailing=(3,))


def write_flo(path, flow):
    '''
    flow has shape (n1, n2, 2) and holds the coordinate components.
    '''
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[-1] != 2:
        raise ShapeMismatchException('A .flo frame has shape (n1, n2, 2), got %s.' % (flow.shape,))
    header = np.zeros(1, dtype=FLO_HEADER)
    header['magic'] = FLO_MAGIC
    header['width'] = flow.shape[1]
    header['height'] = flow.shape[0]
    with open(path, 'wb') as fout:
        fout.write(header.tobytes())
        fout.write(np.ascontiguousarray(flow, dtype='<f4').tobytes())


def read_flo(path):
    raw = _read_bytes(path)
    header = _parse_header(raw, FLO_HEADER, path)
    if header['magic'] != np.float32(FLO_MAGIC):
        raise FormatException('%s is not a .flo file (bad magic number).' % path)
    height = int(header['height'])
    width = int(header['width'])
    if height <= 0 or width <= 0:
        raise FormatException('%s announces an empty flow field.' % path)
    values = _payload(raw, FLO_HEADER, '<f4', height * width * 2, path)
    return values.reshape((height, width, 2)).astype(np.float32)


def write_ppm(path, rgb):
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[-1] != 3:
        raise ShapeMismatchException('RGB images have shape (n1, n2, 3), got %s.' % (rgb.shape,))
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8), mode='RGB').save(path, format='PPM')
