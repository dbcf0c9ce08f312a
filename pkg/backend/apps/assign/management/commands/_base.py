import sys

import structlog
from django.core.management.base import BaseCommand, CommandError

from apps.core.exceptions import BaseAssignError, InternalError, describe
from apps.assign.config import ExperimentConfig
from apps.assign.services import resolve_config

logger = structlog.get_logger(__name__)

EXIT_USAGE = 1


class AssignCommand(BaseCommand):
    """
    Shared options and error mapping for the assignment commands.

    Project errors exit with their own code (1 config, 2 data, 3 internal);
    anything unexpected exits with 3 and argument errors with 1.
    """

    requires_system_checks = []

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        argparse_error = parser.error

        def usage_error(message):
            if parser.called_from_command_line:
                parser.print_usage(sys.stderr)
                parser.exit(EXIT_USAGE, f"{parser.prog}: error: {message}\n")
            argparse_error(message)

        parser.error = usage_error
        return parser

    def add_arguments(self, parser):
        parser.add_argument(
            '--config',
            help='JSON run configuration; settings defaults apply when omitted',
        )
        parser.add_argument(
            '--out',
            default='out',
            help='Output directory (created if missing)',
        )
        parser.add_argument(
            '--seed',
            type=int,
            help='Override the base seed and the negative-sampling seed',
        )
        parser.add_argument(
            '--normalize',
            action='store_true',
            help='Normalize both cost terms to unitless ranges',
        )
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def load_config(self, options) -> ExperimentConfig:
        return resolve_config(options['config'], options['seed'], options['normalize'])

    def handle(self, *args, **options):
        try:
            self.run(options)
        except CommandError:
            raise
        except BaseAssignError as exc:
            raise CommandError(describe(exc), returncode=exc.exit_code)
        except Exception as exc:
            logger.exception("Command crashed", command=self.__class__.__module__)
            raise CommandError(f"Internal error: {exc}", returncode=InternalError.exit_code)

    def run(self, options):
        raise NotImplementedError
