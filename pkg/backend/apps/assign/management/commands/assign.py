from apps.assign.services import AssignmentService
from ._base import AssignCommand


class Command(AssignCommand):
    help = 'Run the configured assigners on one scene and write per-proposal reports'

    def add_command_arguments(self, parser):
        parser.add_argument(
            '--scene',
            help='Scene document written by simulate; defaults to scene slot 0 of the configuration',
        )

    def run(self, options):
        cfg = self.load_config(options)
        outcome = AssignmentService().run(cfg, options['out'], scene_path=options['scene'])

        for name, stats in outcome.items():
            self.stdout.write(
                f"{name}: {stats['positives']} positives, {stats['negatives']} negatives, "
                f"{stats['pending']} pending, inconsistency {stats['inconsistency_rate']:.4f}"
            )
        self.stdout.write(self.style.SUCCESS(f"Reports written to {options['out']}"))
