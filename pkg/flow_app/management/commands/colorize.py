import os
import glob

from flow_app.exceptions import FormatException
from flow_app.fileformats import read_flo, write_ppm
from flow_app.visualization import flow_to_color

from ._base import SurfaceFlowCommand


class Command(SurfaceFlowCommand):
    help = 'Colour codes .flo files as PPM images. A directory of .flo files gives one image per file.'

    def add_arguments(self, parser):
        parser.add_argument('flow', help='A .flo file or a directory of .flo files.')
        parser.add_argument('out', help='Output PPM file, or output directory for a directory input.')
        parser.add_argument('--max-flow', type=float,
            help='Magnitude of full saturation; defaults to a percentile of the magnitudes.')
        parser.add_argument('--percentile', type=float,
            help='Percentile of the magnitudes used when --max-flow is not given.')

    def colorize(self, source, target, options):
        rgb = flow_to_color(read_flo(source), options.get('max_flow'), options.get('percentile'))
        write_ppm(target, rgb)
        self.stdout.write('Wrote %s' % target)

    def run(self, *args, **options):
        source = options['flow']
        if not os.path.isdir(source):
            self.colorize(source, options['out'], options)
            return

        paths = sorted(glob.glob(os.path.join(source, '*.flo')))
        if not paths:
            raise FormatException('No .flo files found in %s.' % source)
        os.makedirs(options['out'], exist_ok=True)
        for path in paths:
            name = os.path.splitext(os.path.basename(path))[0] + '.ppm'
            self.colorize(path, os.path.join(options['out'], name), options)
