from flow_app.assembly import SPATIAL_BOUNDARIES, TIME_SCHEMES, TRACE_CONVENTIONS
from flow_app.exceptions import BreakdownException
from flow_app.pipeline import load_run_config, run_solve, REPORT_FILENAME

from ._base import SurfaceFlowCommand


class Command(SurfaceFlowCommand):
    help = 'Computes the optical flow on a moving surface from a JSON run configuration.'

    def add_arguments(self, parser):
        parser.add_argument('config', help='Path to the run configuration (JSON).')
        parser.add_argument('--alpha', type=float)
        parser.add_argument('--beta', type=float)
        parser.add_argument('--gamma', type=float)
        parser.add_argument('--boundary', choices=SPATIAL_BOUNDARIES)
        parser.add_argument('--restart', type=int)
        parser.add_argument('--max-iters', type=int)
        parser.add_argument('--rel-tol', type=float)
        parser.add_argument('--no-precond', action='store_true', default=None,
            help='Plain GMRES without the block-Jacobi preconditioner.')
        parser.add_argument('--deterministic', action='store_true', default=None,
            help='Fixed-order reductions; repeated runs give identical output.')
        parser.add_argument('--trace-convention', choices=TRACE_CONVENTIONS)
        parser.add_argument('--time-boundary', choices=TIME_SCHEMES)
        parser.add_argument('--sigma-space', type=float)
        parser.add_argument('--sigma-time', type=float)
        parser.add_argument('--normalize', action='store_true', default=None,
            help='Min-max normalize the loaded frames to [0, 1].')
        parser.add_argument('--output', dest='output_dir')
        parser.add_argument('--dump-matrix', action='store_true', default=None,
            help='Also write the system matrix in MatrixMarket format.')
        parser.add_argument('--history', action='store_true', default=None,
            help='Also write the GMRES residual history as CSV.')

    def run(self, *args, **options):
        overrides = {key: options.get(key) for key in ('alpha', 'beta', 'gamma', 'boundary', 'restart',
            'max_iters', 'rel_tol', 'deterministic', 'trace_convention', 'time_boundary',
            'sigma_space', 'sigma_time', 'normalize', 'output_dir', 'dump_matrix', 'history')}
        if options.get('no_precond'):
            overrides['preconditioner'] = 'none'

        config = load_run_config(options['config'], overrides)
        outcome = run_solve(config)
        report = outcome.report

        status = 'converged' if report.converged else 'did not converge'
        self.stdout.write('GMRES %s after %d iterations (relative residual %.3e, %.2fs)'
            % (status, report.iterations, report.relative_residual, report.wall_time))
        self.stdout.write('Energy E = %.6e (S = %.6e, R = %.6e)'
            % (outcome.energy.E, outcome.energy.S, outcome.energy.R))
        self.stdout.write('Results and %s written to %s' % (REPORT_FILENAME, outcome.output_dir))

        if report.breakdown and not report.converged:
            raise BreakdownException('GMRES broke down after %d iterations at relative residual %.3e.'
                % (report.iterations, report.relative_residual))
