import json

import numpy as np

from flow_app.exceptions import FormatException, ShapeMismatchException
from flow_app.flowfield import DIFFERENCES
from flow_app.pipeline import load_run_config, prepare_problem

from ._base import SurfaceFlowCommand


class Command(SurfaceFlowCommand):
    help = 'Evaluates the energy E = S + R of a stored flow (u_frame.npy) under a run configuration.'

    def add_arguments(self, parser):
        parser.add_argument('config', help='Path to the run configuration (JSON).')
        parser.add_argument('u_frame', help='Frame components as written by solve (u_frame.npy).')
        parser.add_argument('--difference', choices=DIFFERENCES, default='forward')

    def run(self, *args, **options):
        config = load_run_config(options['config'])
        try:
            u_frame = np.load(options['u_frame'])
        except (OSError, ValueError) as ex:
            raise FormatException('Could not read %s: %s' % (options['u_frame'], ex))

        problem = prepare_problem(config, assemble=False)
        expected = problem.shape + (2,)
        if u_frame.shape != expected:
            raise ShapeMismatchException('The stored flow has shape %s, the grid needs %s.'
                % (u_frame.shape, expected))
        energy = problem.energy(u_frame, options['difference'])
        self.stdout.write(json.dumps(energy.as_dict()))
