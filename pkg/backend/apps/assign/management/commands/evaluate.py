from apps.assign.services import EvaluationService, subset_names
from ._base import AssignCommand


class Command(AssignCommand):
    help = 'Log-average miss rate of a detection file against annotations'

    def add_command_arguments(self, parser):
        parser.add_argument('--gt', required=True, help='Annotation records: image x1 y1 x2 y2 visibility')
        parser.add_argument('--det', required=True, help='Detection records: image x1 y1 x2 y2 score')
        parser.add_argument(
            '--subset',
            default='reasonable',
            choices=subset_names(),
            help='Annotation subset to evaluate',
        )
        parser.add_argument(
            '--iou-thr',
            type=float,
            default=0.5,
            help='IoU needed for a true positive',
        )
        parser.add_argument(
            '--suite',
            action='store_true',
            help='Also report R50, R75, heavy, partial, bare and LHV',
        )

    def run(self, options):
        self.load_config(options)
        summary = EvaluationService().run(
            options['gt'], options['det'], options['subset'], options['iou_thr'],
            options['out'], suite=options['suite'],
        )

        self.stdout.write(f"MR-2 ({summary['subset']} @ IoU {summary['iou_thr']}): {summary['mr2']:.6f}")
        for column, value in summary.get('suite', {}).items():
            self.stdout.write(f"  {column}: {'n/a' if value is None else f'{value:.6f}'}")
        self.stdout.write(self.style.SUCCESS(f"Curve written to {options['out']}"))
