import json

from flow_app.exceptions import InvalidSpecException
from flow_app.fileformats import write_srf1
from flow_app.surfaces import SURFACE_KINDS, AnalyticSurfaceSpec, make_surface

from ._base import SurfaceFlowCommand


def parse_param(text):
    '''
    key=value, the value read as JSON when possible and as a string otherwise.
    '''
    key, sep, value = text.partition('=')
    if not sep or not key:
        raise InvalidSpecException('Surface parameters are given as key=value, got %r.' % text)
    try:
        return key, json.loads(value)
    except ValueError:
        return key, value


class Command(SurfaceFlowCommand):
    help = 'Samples a builtin surface and writes it as an SRF1 file.'

    def add_arguments(self, parser):
        parser.add_argument('out', help='Output SRF1 file.')
        parser.add_argument('--kind', choices=SURFACE_KINDS, required=True)
        parser.add_argument('--nt', type=int, required=True)
        parser.add_argument('--n1', type=int, required=True)
        parser.add_argument('--n2', type=int, required=True)
        parser.add_argument('--param', action='append', default=[],
            help='Surface parameter as key=value; may be repeated.')
        parser.add_argument('--steps', type=float, nargs=3, metavar=('H_T', 'H_1', 'H_2'))
        parser.add_argument('--heights', help='IMG1 stack of graph heights (graph surfaces only).')

    def run(self, *args, **options):
        params = dict(parse_param(p) for p in options['param'])
        if options.get('heights'):
            if options['kind'] != 'graph':
                raise InvalidSpecException('--heights only applies to graph surfaces.')
            params['samples'] = options['heights']
        spec = AnalyticSurfaceSpec(options['kind'], options['nt'], options['n1'], options['n2'],
            params, options.get('steps'))
        surface = make_surface(spec)
        write_srf1(options['out'], surface)
        self.stdout.write('Wrote %s surface with grid %dx%dx%d to %s'
            % (spec.kind, spec.nt, spec.n1, spec.n2, options['out']))
