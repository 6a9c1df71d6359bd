from django.core.management.base import BaseCommand, CommandError

from flow_app.exceptions import SurfaceFlowException


class SurfaceFlowCommand(BaseCommand):
    '''
    Base for the flow_app commands. Subclasses implement run(); library
    exceptions leave the command as a CommandError carrying the exit code
    of their family.
    '''

    def run(self, *args, **options):
        raise NotImplementedError('Subclasses of SurfaceFlowCommand implement run().')

    def handle(self, *args, **options):
        try:
            return self.run(*args, **options)
        except SurfaceFlowException as ex:
            raise CommandError(str(ex), returncode=ex.exit_code)
