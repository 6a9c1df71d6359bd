'''
Run configurations shared by the test modules.
'''
from flow_app.pipeline import load_run_config, prepare_problem

CONSTANT_IMAGE = {'synthetic': {'kind': 'blobs', 'blobs': [], 'background': 0.4}}
WAVES = {'synthetic': {'kind': 'waves'}}


def run_config(kind='flat_plane', shape=(5, 8, 8), images=None, params=None, **options):
    nt, n1, n2 = shape
    d = {
        'surface': {'kind': kind, 'nt': nt, 'n1': n1, 'n2': n2, 'params': params or {}},
        'images': images or WAVES,
        'alpha': 1.0,
        'beta': 0.1,
        'gamma': 1.0,
    }
    d.update(options)
    return load_run_config(d)


def flat_problem(shape=(5, 8, 8), images=None, assemble=True, **options):
    return prepare_problem(run_config('flat_plane', shape, images, **options), assemble)
