from optimarl.harness.checks import run_duality_check

from ._base import CheckCommand


class Command(CheckCommand):
    help = 'Verify the KL variational form of converged optimistic values state by state'
    kind = 'duality_check'
    check_name = 'duality_check'
    default_kind = 'duality_check'

    def run_check(self, config):
        return run_duality_check(config)
