from django.core.management.base import CommandError

from optimarl.harness.outputs import write_experiment
from optimarl.harness.runner import run_experiment, summarize
from optimarl.tabular.exceptions import ConfigError

from ._base import EXIT_CONFIG, EXIT_RUN_FAILURE, ExperimentCommand


class Command(ExperimentCommand):
    help = 'Run a seeded learning experiment (gridworld_exact, gridworld_sampled or ball_balancing)'

    def handle(self, *args, **options):
        config = self.load_experiment(options)
        output_dir = self.prepare_output(config)
        try:
            result = run_experiment(config)
        except ConfigError as exc:
            raise CommandError(f'Invalid configuration: {exc}', returncode=EXIT_CONFIG) from exc

        write_experiment(result, output_dir)
        if result.records:
            self.stdout.write(summarize(result.records).to_string(index=False))
        self.stdout.write(f'Results written to {output_dir}')
        if result.failed:
            raise CommandError(
                f'{len(result.failures)} of {len(result.failures) + len(result.records)} runs failed',
                returncode=EXIT_RUN_FAILURE,
            )
        self.stdout.write(self.style.SUCCESS('All runs finished'))
