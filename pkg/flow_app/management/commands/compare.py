import os
import glob
import json

import numpy as np
from django.conf import settings

from flow_app.exceptions import FormatException, InvalidConfigException, ShapeMismatchException
from flow_app.fileformats import read_flo, read_srf1, write_ppm
from flow_app.flowfield import ERROR_MODES, angular_error, endpoint_error, pushforward
from flow_app.pipeline import load_run_config, prepare_surface
from flow_app.visualization import error_map

from ._base import SurfaceFlowCommand

ERRORS_FILENAME = 'errors.csv'
SUMMARY_FILENAME = 'summary.json'


def load_flow_frames(source):
    '''
    Coordinate flow of shape (nt, n1, n2, 2) from a directory of .flo
    frames (lexicographic order) or from a single .flo file.
    '''
    if os.path.isdir(source):
        paths = sorted(glob.glob(os.path.join(source, '*.flo')))
        if not paths:
            raise FormatException('No .flo files found in %s.' % source)
    else:
        paths = [source]
    frames = [read_flo(path) for path in paths]
    for path, frame in zip(paths, frames):
        if frame.shape != frames[0].shape:
            raise ShapeMismatchException('%s has shape %s, expected %s.' % (path, frame.shape, frames[0].shape))
    return np.stack(frames).astype(float)


def load_surface(path):
    if path.lower().endswith('.json'):
        surface, _ = prepare_surface(load_run_config(path))
        return surface
    return read_srf1(path)


class Command(SurfaceFlowCommand):
    help = 'Angular and endpoint errors between two flows, per point (CSV) and per frame (JSON).'

    def add_arguments(self, parser):
        parser.add_argument('flow_a', help='A .flo file or a directory of .flo frames.')
        parser.add_argument('flow_b', help='A .flo file or a directory of .flo frames.')
        parser.add_argument('--mode', choices=ERROR_MODES, default='pullback2d')
        parser.add_argument('--surface',
            help='SRF1 file or run configuration JSON; required for ambient3d.')
        parser.add_argument('--output', default='compare_out')

    def run(self, *args, **options):
        mode = options['mode']
        u = load_flow_frames(options['flow_a'])
        v = load_flow_frames(options['flow_b'])
        if u.shape != v.shape:
            raise ShapeMismatchException('The flows have different shapes %s and %s.' % (u.shape, v.shape))

        if mode == 'ambient3d':
            if not options.get('surface'):
                raise InvalidConfigException('The ambient3d mode needs --surface.')
            surface = load_surface(options['surface'])
            u = pushforward(u, surface)
            v = pushforward(v, surface)

        angular = angular_error(u, v, mode)
        endpoint = endpoint_error(u, v, mode)

        output = options['output']
        os.makedirs(output, exist_ok=True)
        nt, n1, n2 = angular.shape
        t, i1, i2 = np.meshgrid(np.arange(nt), np.arange(n1), np.arange(n2), indexing='ij')
        table = np.column_stack([t.ravel(), i1.ravel(), i2.ravel(), angular.ravel(), endpoint.ravel()])
        np.savetxt(os.path.join(output, ERRORS_FILENAME), table, delimiter=',',
            fmt=['%d', '%d', '%d', '%.9g', '%.9g'], header='t,i1,i2,angular,endpoint', comments='')

        frames = []
        for k in range(nt):
            frames.append({
                'frame': k,
                'mean_angular': float(angular[k].mean()),
                'max_angular': float(angular[k].max()),
                'mean_endpoint': float(endpoint[k].mean()),
                'max_endpoint': float(endpoint[k].max()),
            })
            grey = error_map(angular[k])
            write_ppm(os.path.join(output, settings.ERROR_MAP_TEMPLATE % k),
                np.repeat(grey[..., np.newaxis], 3, axis=-1))
        summary = {
            'mode': mode,
            'mean_angular': float(angular.mean()),
            'max_angular': float(angular.max()),
            'mean_endpoint': float(endpoint.mean()),
            'max_endpoint': float(endpoint.max()),
            'frames': frames,
        }
        with open(os.path.join(output, SUMMARY_FILENAME), 'w') as fout:
            json.dump(summary, fout, indent=2)
        self.stdout.write('Mean angular error %.6f, mean endpoint error %.6f over %d frames'
            % (summary['mean_angular'], summary['mean_endpoint'], nt))
