from django.core.management.base import CommandError

from apps.core.exceptions import DataError
from apps.assign.services import ComparisonService
from ._base import AssignCommand


class Command(AssignCommand):
    help = 'Compare assigners over simulated scenes or the Figure-1 fixture'

    def add_command_arguments(self, parser):
        parser.add_argument(
            '--fig1',
            action='store_true',
            help='Run only the canonical two-pedestrian fixture',
        )
        parser.add_argument(
            '--count',
            type=int,
            help='Override the number of scenes',
        )

    def run(self, options):
        cfg = self.load_config(options)
        if options['count'] is not None:
            cfg = cfg.with_overrides(scene_count=options['count'])

        report = ComparisonService().run(cfg, options['out'], figure1=options['fig1'])

        for record in report.summary.to_dict(orient='records'):
            self.stdout.write(
                f"{record['assigner']}: mean inconsistency {record['mean_inconsistency']}, "
                f"scenes ok {record['scenes_ok']}, failed {record['scenes_failed']}"
            )

        if report.failed:
            raise CommandError(
                f"{report.failed} assigner runs failed; see comparison.csv",
                returncode=DataError.exit_code,
            )
        self.stdout.write(self.style.SUCCESS(f"Comparison written to {options['out']}"))
