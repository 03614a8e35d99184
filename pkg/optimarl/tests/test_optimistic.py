import math

import numpy as np
import pytest

from optimarl.tabular.envs import build_matrix_game, gridworld_state, gridworld_target_policy
from optimarl.tabular.exceptions import (
    BoundaryPolicyError,
    DimensionError,
    NonConvergenceError,
    NumericInputError,
    PreconditionError,
    StepSizeError,
)
from optimarl.tabular.mdp import FactoredPolicy, MultiAgentTabularGame, joint_from_factored, risk_neutral_evaluation
from optimarl.tabular.optimistic import (
    GradientTable,
    averaged_optimistic_advantage,
    averaged_optimistic_q,
    averaged_risk_neutral_q,
    check_deterministic_nash,
    directional_derivative,
    exact_policy_gradient,
    finite_difference_gradient,
    project_rows_to_simplex,
    project_to_simplex,
    relative_directional_error,
    risk_neutral_policy_gradient,
    solve_optimistic_values,
    start_value,
)
from optimarl.tabular.risk import soft_values


def _tangent_direction(policy, rng):
    return tuple(d - d.mean(axis=1, keepdims=True) for d in (rng.normal(size=t.shape) for t in policy.tables))


@pytest.fixture
def partner_game():
    """One state, gamma 0; agent 0's first action pays 0 or 1 depending on the partner"""
    return build_matrix_game([[0.0, 1.0], [2.0, 2.0]])


class TestSolveOptimisticValues:

    def test_fixed_point(self, make_random_game, make_interior_policy):
        game = make_random_game(3, n_states=4)
        policy = make_interior_policy(game, 8)
        evaluation = solve_optimistic_values(game, policy, 0.7, tol=1e-12)
        q = game.reward + game.gamma * game.expected_next(evaluation.v)
        np.testing.assert_allclose(soft_values(joint_from_factored(policy), q, 0.7), evaluation.v, atol=1e-10)
        assert evaluation.residual <= 1e-12

    def test_iterates_contract(self, make_random_game, make_interior_policy):
        game = make_random_game(6, n_states=3)
        evaluation = solve_optimistic_values(game, make_interior_policy(game, 1), 2.0)
        deltas = np.asarray(evaluation.deltas)
        for previous, current in zip(deltas[:-1], deltas[1:]):
            if previous > 1e-8:
                assert current <= (game.gamma + 1e-5) * previous

    def test_aux_policy_is_a_tilt(self, make_random_game, make_interior_policy):
        game = make_random_game(2, n_states=3)
        policy = make_interior_policy(game, 4)
        evaluation = solve_optimistic_values(game, policy, 1.3)
        joint = joint_from_factored(policy)
        expected = joint * np.exp(1.3 * (evaluation.q - evaluation.v[:, None]))
        np.testing.assert_allclose(evaluation.aux_policy, expected, atol=1e-9)
        np.testing.assert_allclose(evaluation.aux_policy.sum(axis=1), 1.0, atol=1e-12)

    def test_vanishing_beta_recovers_classical_value(self, make_random_game, make_interior_policy):
        game = make_random_game(7, n_states=4)
        policy = make_interior_policy(game, 5)
        v0 = risk_neutral_evaluation(game, joint_from_factored(policy)).v
        evaluation = solve_optimistic_values(game, policy, 1e-6)
        assert np.max(np.abs(evaluation.v - v0)) <= 1e-4

    def test_monotone_in_beta(self, make_random_game, make_interior_policy):
        game = make_random_game(11, n_states=3)
        policy = make_interior_policy(game, 2)
        v0 = risk_neutral_evaluation(game, joint_from_factored(policy)).v
        previous = v0
        for beta in (0.1, 0.5, 1.0, 3.0):
            v = solve_optimistic_values(game, policy, beta).v
            assert np.all(v >= previous - 1e-9)
            previous = v

    def test_deterministic_policy_matches_classical_value(self, make_random_game):
        game = make_random_game(12, n_states=3)
        policy = FactoredPolicy.from_actions(game.action_counts, [[0, 1], [1, 1], [0, 0]])
        v0 = risk_neutral_evaluation(game, joint_from_factored(policy)).v
        np.testing.assert_allclose(solve_optimistic_values(game, policy, 5.0).v, v0, atol=1e-8)

    def test_rejects_bad_beta(self, partner_game):
        with pytest.raises(PreconditionError):
            solve_optimistic_values(partner_game, FactoredPolicy.uniform((2, 2), 1), 0.0)

    def test_rejects_mismatched_policy(self, partner_game):
        with pytest.raises(DimensionError):
            solve_optimistic_values(partner_game, FactoredPolicy.uniform((3, 2), 1), 1.0)

    def test_iteration_budget(self, make_random_game, make_interior_policy):
        game = make_random_game(1, n_states=3, gamma=0.99)
        with pytest.raises(NonConvergenceError) as excinfo:
            solve_optimistic_values(game, make_interior_policy(game, 1), 1.0, max_iter=3)
        assert excinfo.value.iterations == 3


class TestAveragedTables:

    def test_averaged_q_against_uniform_partner(self, partner_game):
        policy = FactoredPolicy.uniform((2, 2), 1)
        evaluation = solve_optimistic_values(partner_game, policy, 1.0)
        qbar = averaged_optimistic_q(evaluation, policy, 0)
        assert qbar[0, 0] == pytest.approx((1 + math.e) / 2, abs=1e-12)
        assert qbar[0, 0] == pytest.approx(1.859141, abs=1e-6)
        assert qbar[0, 1] == pytest.approx(math.exp(2.0), abs=1e-12)

    def test_normalization_identities(self, make_random_game, make_interior_policy):
        game = make_random_game(21, n_states=3, action_counts=(2, 3))
        policy = make_interior_policy(game, 6)
        beta = 0.8
        evaluation = solve_optimistic_values(game, policy, beta)
        for agent, table in enumerate(policy.tables):
            abar = averaged_optimistic_advantage(evaluation, policy, agent)
            qbar = averaged_optimistic_q(evaluation, policy, agent)
            np.testing.assert_allclose(np.sum(table * abar, axis=1), 1.0 / beta, rtol=1e-9)
            np.testing.assert_allclose(np.sum(table * qbar, axis=1), np.exp(beta * evaluation.v) / beta, rtol=1e-9)
            np.testing.assert_allclose(evaluation.abar[agent], abar)
            np.testing.assert_allclose(abar, qbar * np.exp(-beta * evaluation.v)[:, None], rtol=1e-9)

    def test_q_and_advantage_rank_actions_alike(self, make_random_game, make_interior_policy):
        for seed in range(5):
            game = make_random_game(seed, n_states=4, action_counts=(3, 2))
            policy = make_interior_policy(game, seed)
            evaluation = solve_optimistic_values(game, policy, 1.5)
            for agent in range(policy.n_agents):
                np.testing.assert_array_equal(
                    np.argmax(averaged_optimistic_q(evaluation, policy, agent), axis=1),
                    np.argmax(averaged_optimistic_advantage(evaluation, policy, agent), axis=1),
                )

    def test_averaged_q_refuses_to_overflow(self, partner_game):
        # beta * max Q = 800 puts exp(beta * Q) past the float range
        with pytest.raises(NumericInputError):
            solve_optimistic_values(partner_game, FactoredPolicy.uniform((2, 2), 1), 400.0)

    def test_risk_neutral_average(self, partner_game):
        policy = FactoredPolicy.uniform((2, 2), 1)
        q0 = risk_neutral_evaluation(partner_game, joint_from_factored(policy)).q
        np.testing.assert_allclose(averaged_risk_neutral_q(q0, policy, 0), [[0.5, 2.0]])
        np.testing.assert_allclose(averaged_risk_neutral_q(q0, policy, 1), [[1.0, 1.5]])


class TestExactPolicyGradient:

    def test_matches_finite_differences(self, make_random_game, make_interior_policy):
        rng = np.random.default_rng(3)
        for seed in range(3):
            game = make_random_game(seed, n_states=3)
            policy = make_interior_policy(game, 100 + seed)
            gradient = exact_policy_gradient(game, policy, 0.5)
            for _ in range(3):
                direction = _tangent_direction(policy, rng)
                exact = directional_derivative(gradient, direction)
                approx = finite_difference_gradient(game, policy, 0.5, None, direction, 1e-5)
                assert relative_directional_error(approx, exact, gradient) <= 1e-4

    def test_custom_start_distribution(self, make_random_game, make_interior_policy):
        game = make_random_game(31, n_states=3)
        policy = make_interior_policy(game, 7)
        start = np.array([0.0, 1.0, 0.0])
        gradient = exact_policy_gradient(game, policy, 1.0, start)
        direction = _tangent_direction(policy, np.random.default_rng(0))
        approx = finite_difference_gradient(game, policy, 1.0, start, direction, 1e-5)
        assert relative_directional_error(approx, directional_derivative(gradient, direction), gradient) <= 1e-4

    def test_approaches_classical_gradient_linearly(self, make_random_game, make_interior_policy):
        game = make_random_game(41, n_states=3)
        policy = make_interior_policy(game, 9)
        # the optimistic gradient carries a row-constant 1/beta term, so compare tangent components
        classical = risk_neutral_policy_gradient(game, policy).tangent()

        def gap(beta):
            optimistic = exact_policy_gradient(game, policy, beta).tangent()
            return math.sqrt(sum(np.sum((g - c) ** 2) for g, c in zip(optimistic.tables, classical.tables)))

        ratio = gap(5e-4) / gap(1e-3)
        assert 0.3 <= ratio <= 0.7

    def test_tiny_beta_matches_classical_gradient(self, make_random_game, make_interior_policy):
        game = make_random_game(43, n_states=4)
        policy = make_interior_policy(game, 10)
        optimistic = exact_policy_gradient(game, policy, 1e-6)
        classical = risk_neutral_policy_gradient(game, policy)
        rng = np.random.default_rng(4)
        for _ in range(5):
            direction = _tangent_direction(policy, rng)
            exact = directional_derivative(optimistic, direction)
            oracle = directional_derivative(classical, direction)
            assert relative_directional_error(oracle, exact, optimistic) <= 1e-4

    def test_boundary_policy(self, make_random_game):
        game = make_random_game(1, n_states=2)
        policy = FactoredPolicy.from_actions(game.action_counts, [[0, 0], [1, 1]])
        with pytest.raises(BoundaryPolicyError):
            exact_policy_gradient(game, policy, 1.0)


class TestFiniteDifferenceGradient:

    def test_step_leaving_simplex(self, make_random_game):
        game = make_random_game(1, n_states=1)
        policy = FactoredPolicy((np.array([[0.999, 0.001]]), np.array([[0.5, 0.5]])))
        direction = (np.array([[-1.0, 1.0]]), np.zeros((1, 2)))
        with pytest.raises(StepSizeError):
            finite_difference_gradient(game, policy, 1.0, None, direction, 0.01)

    def test_direction_rows_must_sum_to_zero(self, make_random_game):
        game = make_random_game(1, n_states=1)
        policy = FactoredPolicy.uniform((2, 2), 1)
        with pytest.raises(PreconditionError):
            finite_difference_gradient(game, policy, 1.0, None, (np.ones((1, 2)), np.zeros((1, 2))), 1e-5)

    def test_linear_in_direction(self, make_random_game, make_interior_policy):
        game = make_random_game(5, n_states=2)
        policy = make_interior_policy(game, 5)
        direction = _tangent_direction(policy, np.random.default_rng(1))
        single = finite_difference_gradient(game, policy, 1.0, None, direction, 1e-5)
        doubled = finite_difference_gradient(game, policy, 1.0, None, tuple(2 * d for d in direction), 1e-5)
        assert doubled == pytest.approx(2 * single, rel=1e-5)

    def test_start_value_uses_start(self, partner_game):
        policy = FactoredPolicy.uniform((2, 2), 1)
        expected = solve_optimistic_values(partner_game, policy, 1.0).v[0]
        assert start_value(partner_game, policy, 1.0, [1.0]) == pytest.approx(expected)


class TestRelativeDirectionalError:

    def test_floor_applies_to_tiny_derivatives(self):
        gradient = GradientTable((np.array([[1.0, -1.0]]),))
        # the tangent norm is sqrt(2), so the floor is 1e-2 * sqrt(2)
        assert relative_directional_error(1e-4, 0.0, gradient) == pytest.approx(1e-4 / (1e-2 * math.sqrt(2)))

    def test_relative_to_exact(self):
        gradient = GradientTable((np.array([[0.0, 0.0]]),))
        assert relative_directional_error(2.02, 2.0, gradient) == pytest.approx(0.01)


class TestProjection:

    def test_outside_point(self):
        np.testing.assert_allclose(project_to_simplex([1.2, -0.2]), [1.0, 0.0], atol=1e-12)

    def test_symmetric_point(self):
        np.testing.assert_allclose(project_to_simplex([0.6, 0.6]), [0.5, 0.5], atol=1e-12)

    def test_simplex_points_are_fixed(self, np_rng):
        rows = np_rng.dirichlet(np.ones(4), size=6)
        np.testing.assert_allclose(project_rows_to_simplex(rows), rows, atol=1e-12)

    def test_rows_are_distributions(self, np_rng):
        projected = project_rows_to_simplex(np_rng.normal(scale=5.0, size=(8, 5)))
        np.testing.assert_allclose(projected.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(projected >= 0)

    def test_is_closest_point(self, np_rng):
        point = np_rng.normal(size=3)
        projected = project_to_simplex(point)
        for candidate in np_rng.dirichlet(np.ones(3), size=200):
            assert np.linalg.norm(point - projected) <= np.linalg.norm(point - candidate) + 1e-12

    def test_rejects_non_finite(self):
        with pytest.raises(PreconditionError):
            project_to_simplex([np.nan, 1.0])


class TestCheckDeterministicNash:

    def test_single_agent_optimal_policy(self):
        game = MultiAgentTabularGame(
            (2,), np.array([[0.0, 1.0], [1.0, 0.0]]), 0.9, np.array([0.5, 0.5]),
            next_state=np.array([[0, 1], [0, 1]]),
        )
        # action 1 from state 0 and action 0 from state 1 alternates the two rewards
        optimal = FactoredPolicy.from_actions((2,), [[1], [0]])
        report = check_deterministic_nash(game, optimal)
        assert report.is_nash and report.is_stationary

    def test_coordination_game(self):
        game = build_matrix_game([[1.0, 0.0], [0.0, 2.0]])
        assert check_deterministic_nash(game, FactoredPolicy.from_actions((2, 2), [[0, 0]])).is_nash
        miscoordinated = check_deterministic_nash(game, FactoredPolicy.from_actions((2, 2), [[0, 1]]))
        assert not miscoordinated.is_nash
        assert miscoordinated.max_advantage == pytest.approx((2.0, 1.0))

    def test_gridworld_equilibria(self, gridworld):
        suboptimal = check_deterministic_nash(gridworld, gridworld_target_policy(gridworld, (4, 4)))
        optimal = check_deterministic_nash(gridworld, gridworld_target_policy(gridworld, (2, 2)))
        assert suboptimal.is_nash
        assert optimal.is_nash
        assert optimal.start_value > suboptimal.start_value

    def test_best_cell_policy_is_team_optimal(self, gridworld):
        policy = gridworld_target_policy(gridworld, (2, 2))
        values = risk_neutral_evaluation(gridworld, joint_from_factored(policy)).v
        optimum = np.zeros(gridworld.n_states)
        for _ in range(1000):
            optimum = np.max(gridworld.reward + gridworld.gamma * gridworld.expected_next(optimum), axis=1)
        np.testing.assert_allclose(values, optimum, atol=1e-8)
        np.testing.assert_array_equal(policy.actions()[gridworld_state(2, 2)], [1, 1])
        # one step from a corner of the wrapped grid lies a -10 cell that a unilateral move avoids
        for cell in [(1, 4), (4, 1)]:
            state = gridworld_state(*cell)
            assert gridworld.reward[state, gridworld.joint_index(policy.actions()[state])] >= 0.0
        assert max(check_deterministic_nash(gridworld, policy).max_advantage) <= 1e-8

    def test_target_policy_stays_at_target(self, gridworld):
        policy = gridworld_target_policy(gridworld, (4, 4))
        np.testing.assert_array_equal(policy.actions()[gridworld_state(4, 4)], [1, 1])

    def test_rejects_stochastic_policy(self, partner_game):
        with pytest.raises(PreconditionError):
            check_deterministic_nash(partner_game, FactoredPolicy.uniform((2, 2), 1))
