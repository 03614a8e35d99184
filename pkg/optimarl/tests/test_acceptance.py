"""
Long-running end-to-end checks. Deselected by default; run with ``pytest -m slow``.
"""

from pathlib import Path

import numpy as np
import pytest

from optimarl.harness.config import apply_overrides, load_config
from optimarl.harness.runner import run_experiment, summarize
from optimarl.tabular.envs import build_gridworld, gridworld_state
from optimarl.tabular.learners import EvalConfig, optimistic_evaluation_run
from optimarl.tabular.mdp import (
    FactoredPolicy,
    RngStream,
    joint_from_factored,
    random_game,
    risk_neutral_evaluation,
    visitation_distribution,
)
from optimarl.tabular.optimistic import averaged_optimistic_q, solve_optimistic_values

CONFIG_DIR = Path(__file__).resolve().parents[2] / 'configs'

pytestmark = pytest.mark.slow


def _shipped(name, tmp_path, **overrides):
    return apply_overrides(load_config(CONFIG_DIR / f'{name}.json'), output_dir=str(tmp_path), jobs=1, **overrides)


class TestBellmanSolve:

    @pytest.mark.parametrize('beta', [0.1, 1.0, 5.0])
    def test_random_games_converge_and_contract(self, beta):
        rng = np.random.default_rng(2024)
        for _ in range(50):
            n_states = int(rng.integers(1, 6))
            game = random_game(rng, n_states, (2, 2), 0.9)
            policy = FactoredPolicy.random_interior(game.action_counts, n_states, rng)
            evaluation = solve_optimistic_values(game, policy, beta)
            assert evaluation.residual <= 1e-10
            deltas = np.asarray(evaluation.deltas)
            assert np.all(deltas[1:] <= 0.9 * deltas[:-1] + 1e-13)

    def test_halving_small_beta_halves_the_gap(self):
        rng = np.random.default_rng(77)
        for _ in range(20):
            game = random_game(rng, int(rng.integers(2, 6)), (2, 2), 0.9)
            policy = FactoredPolicy.random_interior(game.action_counts, game.n_states, rng)
            neutral = risk_neutral_evaluation(game, joint_from_factored(policy)).v
            gap = [np.max(np.abs(solve_optimistic_values(game, policy, beta).v - neutral)) for beta in (1e-3, 5e-4)]
            assert 0.3 <= gap[1] / gap[0] <= 0.7


class TestSampledEvaluation:

    @pytest.fixture(scope='class')
    def uniform_gridworld(self):
        game = build_gridworld()
        return game, FactoredPolicy.uniform(game.action_counts, game.n_states)

    def test_matches_exact_tables(self):
        # gamma 0.5: at 0.9 the (2,2) self-loop multiplies the sampling error of its stay frequency tenfold
        game = build_gridworld({'gamma': 0.5})
        policy = FactoredPolicy.uniform(game.action_counts, game.n_states)
        shipped = load_config(CONFIG_DIR / 'gridworld_sampled.json')['evaluation']
        config = EvalConfig(**{**shipped, 't_q': 4_000_000, 'reset_period': None})
        learners = optimistic_evaluation_run(game, policy, config, RngStream(0), 1.0)
        exact = solve_optimistic_values(game, policy, 1.0)
        visited = visitation_distribution(game, joint_from_factored(policy), game.rho) >= 1e-3
        for i, learner in enumerate(learners):
            expected = averaged_optimistic_q(exact, policy, i)
            np.testing.assert_allclose(learner.qbar[visited], expected[visited], rtol=0.05)

    def test_unit_beta_variants_coincide(self, uniform_gridworld):
        game, policy = uniform_gridworld
        config = EvalConfig(t_q=200_000)
        consistent = optimistic_evaluation_run(game, policy, config, RngStream(3), 1.0)
        literal = optimistic_evaluation_run(game, policy, config.model_copy(update={'consistent_z': False}),
                                            RngStream(3), 1.0)
        for a, b in zip(consistent, literal):
            np.testing.assert_array_equal(a.qbar, b.qbar)

    @pytest.mark.parametrize('beta', [0.5, 2.0])
    def test_variants_rank_actions_alike(self, uniform_gridworld, beta):
        game, policy = uniform_gridworld
        config = EvalConfig(t_q=2_000_000)
        consistent = optimistic_evaluation_run(game, policy, config, RngStream(5), beta)
        literal = optimistic_evaluation_run(game, policy, config.model_copy(update={'consistent_z': False}),
                                            RngStream(5), beta)
        exact = solve_optimistic_values(game, policy, beta)
        for i, (a, b) in enumerate(zip(consistent, literal)):
            ranked = np.sort(averaged_optimistic_q(exact, policy, i), axis=1)
            # only states with an exact tie for the best action are left out
            untied = ranked[:, -1] > ranked[:, -2]
            assert untied.sum() >= game.n_states // 2
            np.testing.assert_array_equal(np.argmax(a.qbar[untied], axis=1), np.argmax(b.qbar[untied], axis=1))


class TestGridworldReproduction:

    def test_risk_neutral_gradient_settles_at_the_corner(self, tmp_path):
        result = run_experiment(_shipped('gridworld_exact', tmp_path, algorithm='risk_neutral_pg'))
        assert result.records[0].visitation[gridworld_state(4, 4)] >= 0.5

    def test_optimistic_gradient_reaches_the_high_reward_cell(self, tmp_path):
        result = run_experiment(_shipped('gridworld_exact', tmp_path, algorithm='optimistic_pg'))
        assert result.records[0].visitation[gridworld_state(2, 2)] >= 0.8


class TestBallBalancing:

    def test_optimistic_learner_beats_baselines(self, tmp_path):
        result = run_experiment(_shipped('ball_balancing', tmp_path))
        assert not result.failed
        summary = summarize(result.records).set_index('variant')
        optimistic = summary[summary.index.str.startswith('optimistic')]
        best = optimistic.loc[optimistic['mean'].idxmax()]
        assert best['mean'] >= summary.loc['hysteretic_q', 'mean']
        assert best['mean'] >= summary.loc['decentralized_q', 'mean']
        assert best['std'] <= summary.loc['decentralized_q', 'std']
