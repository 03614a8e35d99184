from optimarl.harness.checks import run_grad_check

from ._base import CheckCommand


class Command(CheckCommand):
    help = 'Compare exact optimistic policy gradients with central finite differences on random games'
    kind = 'grad_check'
    check_name = 'grad_check'
    default_kind = 'grad_check'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--games', type=int, help='Number of random games per seed')

    def load_experiment(self, options):
        config = super().load_experiment(options)
        if options.get('games') is not None:
            config = config.model_copy(
                update={'grad_check': config.grad_check.model_copy(update={'n_games': max(0, options['games'])})}
            )
        return config

    def run_check(self, config):
        return run_grad_check(config)
