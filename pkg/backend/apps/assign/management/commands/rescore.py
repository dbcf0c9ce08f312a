from apps.assign.services import RescoreService
from ._base import AssignCommand


class Command(AssignCommand):
    help = 'Rescore detections with predicted and recomputed matching costs'

    def add_command_arguments(self, parser):
        parser.add_argument('--det', required=True, help='Detection records to rescore')
        parser.add_argument('--costs', required=True, help='Cost records: id predicted actual')

    def run(self, options):
        self.load_config(options)
        target = RescoreService().run(options['det'], options['costs'], options['out'])
        self.stdout.write(self.style.SUCCESS(f"Rescored detections written to {target}"))
