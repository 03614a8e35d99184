from optimarl.harness.checks import run_exact_evaluation

from ._base import CheckCommand


class Command(CheckCommand):
    help = 'Solve the optimistic Bellman equation exactly for the configured policy at every beta'
    default_kind = 'gridworld_exact'
    check_name = 'eval_exact'
    report_name = 'evaluation.json'

    def run_check(self, config):
        return run_exact_evaluation(config)
