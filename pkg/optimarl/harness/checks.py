"""
Numerical self-checks behind the check commands.

Each function returns a JSON-ready report with a ``passed`` flag; the
commands decide the exit status from it.
"""

from __future__ import annotations

import logging
import math
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from ..tabular.envs import gridworld_target_policy
from ..tabular.mdp import (
    FactoredPolicy,
    RngStream,
    StreamPurpose,
    joint_from_factored,
    random_game,
    risk_neutral_evaluation,
)
from ..tabular.optimistic import (
    check_deterministic_nash,
    directional_derivative,
    exact_policy_gradient,
    finite_difference_gradient,
    relative_directional_error,
    risk_neutral_policy_gradient,
    solve_optimistic_values,
)
from ..tabular.risk import RiskParams, duality_check, simplex_grid
from .config import ExperimentConfig
from .runner import build_environment, initial_policy

logger = logging.getLogger(__name__)


def random_tangent_direction(action_counts: Sequence[int], n_states: int,
                             rng: np.random.Generator) -> tuple[NDArray[np.float64], ...]:
    """Gaussian direction with zero row sums, scaled to unit Frobenius norm over all agents."""
    tables = [rng.standard_normal((n_states, count)) for count in action_counts]
    tables = [t - t.mean(axis=1, keepdims=True) for t in tables]
    norm = math.sqrt(sum(float(np.sum(t * t)) for t in tables))
    return tuple(t / norm for t in tables)


def run_grad_check(config: ExperimentConfig) -> dict:
    """
    Compare exact gradients with central differences on random games.

    For every beta, seed and game index ``g`` the game, the interior policy and
    the directions come from streams ``(seed, run=g)`` with purposes GAME,
    POLICY_INIT and DIRECTIONS.
    """
    settings = config.grad_check
    entries = []
    for beta in config.betas:
        for seed in config.seeds:
            for g in range(settings.n_games):
                game_rng = RngStream(seed, run=g, purpose=StreamPurpose.GAME).generator
                n_states = int(game_rng.integers(settings.min_states, settings.max_states + 1))
                game = random_game(game_rng, n_states, settings.action_counts, settings.gamma)
                policy = FactoredPolicy.random_interior(
                    game.action_counts, n_states, RngStream(seed, run=g, purpose=StreamPurpose.POLICY_INIT).generator,
                )
                gradient = exact_policy_gradient(game, policy, beta)
                classical = risk_neutral_policy_gradient(game, policy) if settings.classical_oracle else None
                direction_rng = RngStream(seed, run=g, purpose=StreamPurpose.DIRECTIONS).generator

                worst = 0.0
                worst_classical = 0.0
                for _ in range(settings.directions):
                    direction = random_tangent_direction(game.action_counts, n_states, direction_rng)
                    exact = directional_derivative(gradient, direction)
                    approx = finite_difference_gradient(game, policy, beta, None, direction, settings.h)
                    worst = max(worst, relative_directional_error(approx, exact, gradient))
                    if classical is not None:
                        oracle = directional_derivative(classical, direction)
                        worst_classical = max(worst_classical, relative_directional_error(oracle, exact, gradient))

                entry = {'beta': beta, 'seed': seed, 'game': g, 'n_states': n_states, 'max_relative_error': worst}
                if classical is not None:
                    entry['classical_max_relative_error'] = worst_classical
                entries.append(entry)
                logger.debug("grad check beta=%g seed=%d game=%d: %.3e", beta, seed, g, worst)

    max_error = max((e['max_relative_error'] for e in entries), default=0.0)
    report = {
        'threshold': settings.threshold,
        'h': settings.h,
        'n_checked': len(entries),
        'max_relative_error': max_error,
        'passed': max_error <= settings.threshold,
        'entries': entries,
    }
    if settings.classical_oracle:
        classical_max = max((e['classical_max_relative_error'] for e in entries), default=0.0)
        report['classical_max_relative_error'] = classical_max
        report['passed'] = report['passed'] and classical_max <= settings.threshold
    return report


def run_nash_check(config: ExperimentConfig) -> dict:
    """Certify the "go to a cell and stay" gridworld policies and rank them by start value."""
    game = build_environment(config)
    settings = config.nash_check
    entries = []
    for target in settings.targets:
        policy = gridworld_target_policy(game, tuple(target), config.gridworld.size)
        report = check_deterministic_nash(game, policy, settings.tol)
        entries.append({'target': list(target), **report.to_dict()})
    best = max(entries, key=lambda e: e['start_value'], default=None)
    return {
        'tol': settings.tol,
        'entries': entries,
        'best_target': None if best is None else best['target'],
        'passed': all(e['is_nash'] for e in entries),
    }


def run_duality_check(config: ExperimentConfig) -> dict:
    """
    Per-state duality of converged optimistic values on random games.

    The dual gap is ``|V(s) - (E_tilt Q - KL(tilt || pi) / beta)|``; the grid
    excess is the largest amount by which any simplex-grid candidate beats V(s).
    """
    settings = config.duality_check
    entries = []
    for beta in config.betas:
        params = RiskParams(beta)
        for seed in config.seeds:
            for g in range(settings.n_games):
                game_rng = RngStream(seed, run=g, purpose=StreamPurpose.GAME).generator
                game = random_game(game_rng, settings.n_states, settings.action_counts, settings.gamma)
                policy = FactoredPolicy.random_interior(
                    game.action_counts, game.n_states, RngStream(seed, run=g, purpose=StreamPurpose.POLICY_INIT).generator,
                )
                evaluation = solve_optimistic_values(game, policy, beta)
                joint = joint_from_factored(policy)
                candidates = simplex_grid(game.n_joint, settings.resolution)
                dual_gap = 0.0
                grid_excess = -math.inf
                for s in range(game.n_states):
                    report = duality_check(joint[s], evaluation.q[s], params, candidates)
                    dual_gap = max(dual_gap, abs(report.tilt_gap))
                    grid_excess = max(grid_excess, report.max_gap)
                entries.append({'beta': beta, 'seed': seed, 'game': g, 'dual_gap': dual_gap, 'grid_excess': grid_excess})

    max_gap = max((e['dual_gap'] for e in entries), default=0.0)
    max_excess = max((e['grid_excess'] for e in entries), default=-math.inf)
    return {
        'tol': settings.tol,
        'resolution': settings.resolution,
        'max_dual_gap': max_gap,
        'max_grid_excess': max_excess if math.isfinite(max_excess) else None,
        'passed': max_gap <= settings.tol and max_excess <= settings.tol,
        'entries': entries,
    }


def run_exact_evaluation(config: ExperimentConfig) -> dict:
    """Exact optimistic tables of the configured initial policy at every beta, plus the risk-neutral values."""
    game = build_environment(config)
    policy = initial_policy(config, game, config.seeds[0])
    risk_neutral = risk_neutral_evaluation(game, joint_from_factored(policy))
    evaluations = []
    for beta in config.betas:
        evaluation = solve_optimistic_values(game, policy, beta)
        evaluations.append({'start_value': float(game.rho @ evaluation.v), **evaluation.to_dict()})
    return {
        'game': game.name,
        'policy': policy.to_dict(),
        'risk_neutral': {
            'start_value': float(game.rho @ risk_neutral.v),
            'v': risk_neutral.v.tolist(),
            'q': risk_neutral.q.tolist(),
        },
        'evaluations': evaluations,
    }
