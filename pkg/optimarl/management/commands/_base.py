from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Optional

from django.core.management.base import BaseCommand, CommandError

from optimarl.harness.config import ExperimentConfig, apply_overrides, load_config
from optimarl.harness.outputs import ensure_output_dir, write_report
from optimarl.tabular.exceptions import ConfigError, OptimarlError

logger = logging.getLogger(__name__)

EXIT_CONFIG = 1
EXIT_RUN_FAILURE = 2
EXIT_CHECK_FAILED = 3

ALGORITHM_CHOICES = ['optimistic_pg', 'optimistic_greedy', 'decentralized_q', 'hysteretic_q', 'risk_neutral_pg']


class ExperimentCommand(BaseCommand):
    """
    Shared flags and config handling.

    ``kind`` pins the experiment kind a config file must declare;
    ``default_kind`` is used when no config file is given.
    """

    kind: Optional[str] = None
    default_kind: Optional[str] = None

    def add_arguments(self, parser):
        parser.add_argument('--config', type=Path, help='JSON experiment config')
        parser.add_argument('--out', dest='output_dir', help='Output directory (overrides the config)')
        parser.add_argument('--seed', type=int, action='append', dest='seeds',
                            help='Seed to run; repeat for several seeds')
        parser.add_argument('--beta', type=float, help='Risk-seeking temperature (replaces the config betas)')
        parser.add_argument('--algo', choices=ALGORITHM_CHOICES, help='Single algorithm to run')
        parser.add_argument('--jobs', type=int, help='Worker processes for independent seeds')

    def load_experiment(self, options) -> ExperimentConfig:
        """Config with precedence flags > file > defaults; exits with status 1 when invalid."""
        try:
            if options.get('config') is not None:
                data = load_config(options['config'], self.kind)
            elif self.default_kind is not None:
                data = {'kind': self.default_kind}
            else:
                raise ConfigError('--config is required')
            return apply_overrides(
                data,
                beta=options.get('beta'),
                seeds=options.get('seeds'),
                output_dir=options.get('output_dir'),
                algorithm=options.get('algo'),
                jobs=options.get('jobs'),
            )
        except ConfigError as exc:
            raise CommandError(f'Invalid configuration: {exc}', returncode=EXIT_CONFIG) from exc

    def prepare_output(self, config: ExperimentConfig) -> Path:
        try:
            return ensure_output_dir(config.output_dir)
        except OSError as exc:
            raise CommandError(f'Cannot write to {config.output_dir}: {exc}', returncode=EXIT_CONFIG) from exc


class CheckCommand(ExperimentCommand):
    """A numerical check: writes report.json and exits with status 3 when the check fails."""

    report_name = 'report.json'
    check_name = 'check'

    def run_check(self, config: ExperimentConfig) -> dict:
        raise NotImplementedError

    def handle(self, *args, **options):
        config = self.load_experiment(options)
        output_dir = self.prepare_output(config)
        try:
            report = self.run_check(config)
        except ConfigError as exc:
            raise CommandError(f'Invalid configuration: {exc}', returncode=EXIT_CONFIG) from exc
        except (OptimarlError, ArithmeticError) as exc:
            raise CommandError(f'{self.check_name} failed: {exc}', returncode=EXIT_RUN_FAILURE) from exc

        path = write_report(report, output_dir, self.report_name)
        summary = {k: v for k, v in report.items() if k != 'entries'}
        self.stdout.write(json.dumps(summary, indent=2))
        self.stdout.write(f'Report written to {path}')
        if not report.get('passed', True):
            raise CommandError(f'{self.check_name} failed its threshold', returncode=EXIT_CHECK_FAILED)
        self.stdout.write(self.style.SUCCESS(f'{self.check_name} passed'))
