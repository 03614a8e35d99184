from optimarl.harness.checks import run_nash_check

from ._base import CheckCommand


class Command(CheckCommand):
    help = 'Certify deterministic "move to a cell and stay" gridworld policies as Nash equilibria'
    kind = 'nash_check'
    check_name = 'nash_check'
    default_kind = 'nash_check'

    def run_check(self, config):
        return run_nash_check(config)
