'''
Image sequences pulled back to the parameter domain: loading,
pre-smoothing, derivatives and synthetic test sequences.
'''
import os
import glob
import logging
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import convolve1d

from helpers.finite_differences import derivative

from flow_app.exceptions import FormatException, \
    ShapeMismatchException, \
    InvalidSpecException
from flow_app.fileformats import IMG1_MAGIC, read_img1

logger = logging.getLogger(__name__)

PGM_EXTENSIONS = ('.pgm', '.pnm')
SYNTHETIC_KINDS = ('blobs', 'waves')

# (center x1, center x2, velocity x1, velocity x2, radius, intensity)
# in fractions of the grid size per frame, loosely modelled on the
# traffic scene: a few bright objects of different size and speed
DEFAULT_BLOBS = [
    (0.30, 0.25, 0.0, 0.012, 0.08, 0.6),
    (0.60, 0.70, 0.0, -0.010, 0.06, 0.5),
    (0.75, 0.35, -0.008, 0.006, 0.05, 0.45),
]


@dataclass
class ImageSequence:
    values: np.ndarray
    wrap1: bool = False
    wrap2: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ShapeMismatchException('Image sequences have shape (nt, n1, n2), got %s.'
                % (self.values.shape,))

    @property
    def shape(self):
        return self.values.shape

    @property
    def nt(self):
        return self.values.shape[0]

    @property
    def n1(self):
        return self.values.shape[1]

    @property
    def n2(self):
        return self.values.shape[2]


@dataclass
class ImageDerivatives:
    dIt: np.ndarray
    dI1: np.ndarray
    dI2: np.ndarray

    @property
    def shape(self):
        return self.dIt.shape

    def spatial_gradient(self):
        return np.stack([self.dI1, self.dI2], axis=-1)


def _read_pgm(path):
    try:
        with Image.open(path) as image:
            image.load()
            mode = image.mode
            fmt = image.format
            data = np.asarray(image)
    except (UnidentifiedImageError, OSError, ValueError) as ex:
        raise FormatException('Could not read PGM frame %s: %s' % (path, ex))

    if fmt != 'PPM':
        raise FormatException('%s is a %s image, not a binary PGM.' % (path, fmt))
    if mode == 'L':
        maxval = 255.0
    elif mode.startswith('I'):
        maxval = 65535.0
    else:
        raise FormatException('%s has mode %s; only grey-scale PGM frames are supported.'
            % (path, mode))
    return data.astype(float) / maxval


def load_pgm_frames(paths, wrap1=False, wrap2=False):
    '''
    One frame per file; the order of paths defines the time axis.
    '''
    if len(paths) == 0:
        raise FormatException('No PGM frames were given.')
    frames = []
    for path in paths:
        frame = _read_pgm(path)
        if frames and frame.shape != frames[0].shape:
            raise ShapeMismatchException('Frame %s has shape %s, expected %s.'
                % (path, frame.shape, frames[0].shape))
        frames.append(frame)
    logger.info('Loaded %d PGM frames of size %s' % (len(frames), frames[0].shape))
    return ImageSequence(np.stack(frames), wrap1, wrap2)


def _min_max(values):
    low = values.min()
    high = values.max()
    if high > low:
        return (values - low) / (high - low)
    return np.zeros_like(values)


def load_image_sequence(source, wrap1=False, wrap2=False, normalize=False):
    '''
    Loads an image sequence from
      - a directory of PGM frames (lexicographic order),
      - a list of PGM paths,
      - an IMG1 raw stack, or
      - a numpy array of shape (nt, n1, n2).
    PGM intensities are divided by the format maxval. Raw floats are
    min-max normalized only when normalize is set.
    '''
    if isinstance(source, np.ndarray):
        values = np.asarray(source, dtype=float)
        if normalize:
            values = _min_max(values)
        return ImageSequence(values, wrap1, wrap2)

    if isinstance(source, (list, tuple)):
        return load_pgm_frames(list(source), wrap1, wrap2)

    if os.path.isdir(source):
        paths = sorted(p for p in glob.glob(os.path.join(source, '*'))
            if p.lower().endswith(PGM_EXTENSIONS))
        return load_pgm_frames(paths, wrap1, wrap2)

    if not os.path.exists(source):
        raise FormatException('Image source %s does not exist.' % source)

    with open(source, 'rb') as fin:
        magic = fin.read(len(IMG1_MAGIC))
    if magic == IMG1_MAGIC:
        values = read_img1(source).astype(float)
        if normalize:
            values = _min_max(values)
        logger.info('Loaded IMG1 stack %s with shape %s' % (source, values.shape))
        return ImageSequence(values, wrap1, wrap2)

    return load_pgm_frames([source], wrap1, wrap2)


def gaussian_kernel(sigma):
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_presmooth(img, sigma_space, sigma_time):
    '''
    Separable Gaussian smoothing; periodic axes wrap, the others reflect.
    A zero sigma leaves that axis untouched.
    '''
    if sigma_space < 0 or sigma_time < 0:
        raise InvalidSpecException('Smoothing widths must be non-negative.')
    values = img.values
    axes = [(0, sigma_time, False), (1, sigma_space, img.wrap1), (2, sigma_space, img.wrap2)]
    for axis, sigma, periodic in axes:
        if sigma == 0:
            continue
        mode = 'wrap' if periodic else 'reflect'
        values = convolve1d(values, gaussian_kernel(sigma), axis=axis, mode=mode)
    return ImageSequence(values, img.wrap1, img.wrap2)


def image_derivatives(img, h_t, h_1, h_2):
    dIt = derivative(img.values, 0, h_t)
    dI1 = derivative(img.values, 1, h_1, img.wrap1)
    dI2 = derivative(img.values, 2, h_2, img.wrap2)
    for name, values in (('dIt', dIt), ('dI1', dI1), ('dI2', dI2)):
        if not np.all(np.isfinite(values)):
            index = np.argwhere(~np.isfinite(values))[0]
            raise FormatException('Image derivative %s is not finite.' % name, grid_index=index)
    return ImageDerivatives(dIt, dI1, dI2)


def _axis_distance(x, center, n, periodic):
    d = x - center
    if periodic:
        d = (d + 0.5 * n) % n - 0.5 * n
    return d


def synthetic_sequence(nt, n1, n2, kind='blobs', wrap1=False, wrap2=False,
        blobs=None, background=0.2, velocity=(0.5, 0.25), wavelength=16.0):
    '''
    Desk-scale test sequences with values in [0, 1].

    kind='blobs': Gaussian blobs translating over a constant background
    (fractions of the grid size, see DEFAULT_BLOBS); distances use the
    nearest periodic image on wrapped axes.
    kind='waves': a smooth sinusoidal pattern translating with the given
    velocity in grid cells per frame.
    '''
    if kind not in SYNTHETIC_KINDS:
        raise InvalidSpecException('Unknown synthetic sequence "%s"; expected one of %s.'
            % (kind, ', '.join(SYNTHETIC_KINDS)))
    t, x1, x2 = np.meshgrid(np.arange(nt, dtype=float), np.arange(n1, dtype=float),
        np.arange(n2, dtype=float), indexing='ij')

    if kind == 'waves':
        k = 2.0 * np.pi / wavelength
        phase1 = x1 - velocity[0] * t
        phase2 = x2 - velocity[1] * t
        values = 0.5 + 0.25 * np.sin(k * phase1) * np.cos(0.75 * k * phase2)
        return ImageSequence(values, wrap1, wrap2)

    if blobs is None:
        blobs = DEFAULT_BLOBS
    values = np.full((nt, n1, n2), float(background))
    for c1, c2, v1, v2, radius, intensity in blobs:
        d1 = _axis_distance(x1, (c1 + v1 * t) * n1, n1, wrap1)
        d2 = _axis_distance(x2, (c2 + v2 * t) * n2, n2, wrap2)
        s = radius * min(n1, n2)
        values += intensity * np.exp(-0.5 * (d1 ** 2 + d2 ** 2) / s ** 2)
    return ImageSequence(np.clip(values, 0.0, 1.0), wrap1, wrap2)
