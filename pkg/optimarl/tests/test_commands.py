import json
from io import StringIO
from unittest.mock import patch

import pytest
from django.core.management import call_command
from django.core.management.base import CommandError

from optimarl.harness.runner import ExperimentResult, SeedFailure
from optimarl.tabular.exceptions import NonConvergenceError


@pytest.fixture
def write_config(tmp_path):
    """Write a JSON config into the test directory and return its path"""
    def _write(data, name='config.json'):
        path = tmp_path / name
        path.write_text(json.dumps(data))
        return path
    return _write


def _call(name, *args):
    out = StringIO()
    call_command(name, *args, stdout=out)
    return out.getvalue()


class TestRunCommand:

    def test_small_exact_run(self, write_config, tmp_path):
        config = write_config({
            'kind': 'gridworld_exact',
            'algorithms': ['optimistic_greedy', 'risk_neutral_pg'],
            'update': {'iterations': 2},
        })
        out_dir = tmp_path / 'out'
        output = _call('run', '--config', str(config), '--out', str(out_dir), '--seed', '0', '--seed', '1')

        assert 'All runs finished' in output
        assert (out_dir / 'summary.csv').exists()
        assert (out_dir / 'heatmap.csv').exists()
        assert sorted(p.name for p in (out_dir / 'runs').iterdir()) == ['0.json', '1.json']
        record = json.loads((out_dir / 'runs' / '1.json').read_text())['records'][0]
        assert record['seed'] == 1
        assert record['config']['seeds'] == [0, 1]

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(CommandError) as exc_info:
            _call('run', '--config', str(tmp_path / 'nope.json'), '--out', str(tmp_path))
        assert exc_info.value.returncode == 1

    def test_config_is_required(self, tmp_path):
        with pytest.raises(CommandError) as exc_info:
            _call('run', '--out', str(tmp_path))
        assert exc_info.value.returncode == 1

    def test_invalid_algorithm_for_kind(self, write_config, tmp_path):
        config = write_config({'kind': 'gridworld_exact'})
        with pytest.raises(CommandError) as exc_info:
            _call('run', '--config', str(config), '--algo', 'hysteretic_q', '--out', str(tmp_path))
        assert exc_info.value.returncode == 1

    def test_check_config_is_not_a_run(self, write_config, tmp_path):
        config = write_config({'kind': 'nash_check'})
        with pytest.raises(CommandError) as exc_info:
            _call('run', '--config', str(config), '--out', str(tmp_path))
        assert exc_info.value.returncode == 1

    @patch('optimarl.management.commands.run.run_experiment')
    def test_failed_seeds_exit_with_run_failure(self, mock_run_experiment, write_config, tmp_path):
        config = write_config({'kind': 'gridworld_exact', 'algorithms': ['optimistic_greedy']})
        mock_run_experiment.side_effect = lambda cfg: ExperimentResult(
            config=cfg, failures=[SeedFailure('optimistic_greedy', 0, 'NonConvergenceError: stuck')],
        )
        with pytest.raises(CommandError) as exc_info:
            _call('run', '--config', str(config), '--out', str(tmp_path / 'out'))
        assert exc_info.value.returncode == 2
        summary = (tmp_path / 'out' / 'runs' / '0.json').read_text()
        assert 'NonConvergenceError' in summary

    @patch('optimarl.harness.outputs.os.access')
    def test_unwritable_output(self, mock_access, write_config, tmp_path):
        mock_access.return_value = False
        config = write_config({'kind': 'gridworld_exact'})
        with pytest.raises(CommandError) as exc_info:
            _call('run', '--config', str(config), '--out', str(tmp_path / 'locked'))
        assert exc_info.value.returncode == 1


class TestCheckCommands:

    def test_grad_check(self, write_config, tmp_path):
        config = write_config({'kind': 'grad_check', 'grad_check': {'directions': 2, 'max_states': 3}})
        output = _call('grad_check', '--config', str(config), '--games', '2', '--out', str(tmp_path))
        report = json.loads((tmp_path / 'report.json').read_text())
        assert report['n_checked'] == 2
        assert report['passed']
        assert 'grad_check passed' in output

    def test_grad_check_kind_mismatch(self, write_config, tmp_path):
        config = write_config({'kind': 'nash_check'})
        with pytest.raises(CommandError) as exc_info:
            _call('grad_check', '--config', str(config), '--out', str(tmp_path))
        assert exc_info.value.returncode == 1

    def test_nash_check_without_config(self, tmp_path):
        _call('nash_check', '--out', str(tmp_path))
        report = json.loads((tmp_path / 'report.json').read_text())
        assert report['passed']
        assert report['best_target'] == [2, 2]

    @patch('optimarl.management.commands.nash_check.run_nash_check')
    def test_failed_check_exit_status(self, mock_check, tmp_path):
        mock_check.return_value = {'passed': False, 'entries': []}
        with pytest.raises(CommandError) as exc_info:
            _call('nash_check', '--out', str(tmp_path))
        assert exc_info.value.returncode == 3
        assert json.loads((tmp_path / 'report.json').read_text()) == {'passed': False, 'entries': []}

    @patch('optimarl.management.commands.duality_check.run_duality_check')
    def test_numerical_failure_exit_status(self, mock_check, tmp_path):
        mock_check.side_effect = NonConvergenceError('value iteration', 1e-3, 100)
        with pytest.raises(CommandError) as exc_info:
            _call('duality_check', '--out', str(tmp_path))
        assert exc_info.value.returncode == 2

    def test_duality_check(self, write_config, tmp_path):
        config = write_config({'kind': 'duality_check', 'duality_check': {'n_games': 1, 'resolution': 8}})
        _call('duality_check', '--config', str(config), '--beta', '2.0', '--out', str(tmp_path))
        report = json.loads((tmp_path / 'report.json').read_text())
        assert report['passed']
        assert {e['beta'] for e in report['entries']} == {2.0}

    def test_eval_exact(self, tmp_path):
        _call('eval_exact', '--beta', '0.5', '--out', str(tmp_path))
        report = json.loads((tmp_path / 'evaluation.json').read_text())
        assert report['game'] == 'gridworld'
        assert len(report['evaluations']) == 1
        assert len(report['evaluations'][0]['v']) == 16

    def test_eval_exact_accepts_a_run_config(self, write_config, tmp_path):
        config = write_config({'kind': 'gridworld_sampled', 'gridworld': {'gamma': 0.5}})
        _call('eval_exact', '--config', str(config), '--out', str(tmp_path))
        assert (tmp_path / 'evaluation.json').exists()
