from apps.assign.services import SimulationService
from ._base import AssignCommand


class Command(AssignCommand):
    help = 'Generate synthetic scenes with depth grids and proposals'

    def add_command_arguments(self, parser):
        parser.add_argument(
            '--count',
            type=int,
            help='Override the number of scenes',
        )

    def run(self, options):
        cfg = self.load_config(options)
        if options['count'] is not None:
            cfg = cfg.with_overrides(scene_count=options['count'])

        summary = SimulationService().run(cfg, options['out'])

        self.stdout.write(
            self.style.SUCCESS(f"Wrote {len(summary.scene_files)} scenes to {summary.out_dir}")
        )
