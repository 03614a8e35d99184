"""
Exact optimistic evaluation and policy gradients for factored tabular policies.

The optimistic value of a baseline policy is the entropic soft value of its
Q-function, ``V(s) = beta^-1 log E_{a ~ pi_s} exp(beta Q(s, a))`` with
``Q(s, a) = r(s, a) + gamma E V(s')``. Its maximizing auxiliary policy is the
tilt ``pi_hat ∝ pi * exp(beta Q)``, stored densely over joint actions because
it does not factorize across agents.

See formulas.md for the derivations behind each table.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .defaults import (
    FINITE_DIFFERENCE_TOL,
    NASH_TOL,
    RELATIVE_ERROR_FLOOR,
    SAFE_EXPONENT,
    VALUE_MAX_ITER,
    VALUE_TOL,
)
from .exceptions import (
    BoundaryPolicyError,
    DimensionError,
    NonConvergenceError,
    NumericInputError,
    PreconditionError,
    StepSizeError,
)
from .mdp import (
    FactoredPolicy,
    JointPolicy,
    MultiAgentTabularGame,
    joint_from_factored,
    risk_neutral_evaluation,
    visitation_distribution,
)
from .risk import RiskParams, soft_values, tilted_rows

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OptimisticEvaluation:
    """Converged optimistic tables of one policy at one ``beta``."""

    beta: float
    v: NDArray[np.float64]
    q: NDArray[np.float64]
    aux_policy: JointPolicy
    qbar: tuple[NDArray[np.float64], ...]
    abar: tuple[NDArray[np.float64], ...]
    residual: float
    iterations: int
    deltas: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            'beta': self.beta,
            'v': self.v.tolist(),
            'q': self.q.tolist(),
            'aux_policy': self.aux_policy.tolist(),
            'qbar': [t.tolist() for t in self.qbar],
            'abar': [t.tolist() for t in self.abar],
            'residual': self.residual,
            'iterations': self.iterations,
        }


@dataclass(frozen=True, eq=False)
class GradientTable:
    """Per-agent partial derivatives ``g[i][s, a_i]`` of ``E_{s0 ~ start} V(s0)``."""

    tables: tuple[NDArray[np.float64], ...]

    def dot(self, direction: Sequence[NDArray[np.float64]]) -> float:
        return float(sum(np.sum(g * np.asarray(d)) for g, d in zip(self.tables, direction)))

    def tangent(self) -> GradientTable:
        """Component inside the product of simplex tangent spaces (row means removed)."""
        return GradientTable(tuple(g - g.mean(axis=1, keepdims=True) for g in self.tables))

    def norm(self) -> float:
        return float(math.sqrt(sum(np.sum(g * g) for g in self.tables)))


@dataclass(frozen=True)
class NashReport:
    max_advantage: tuple[float, ...]
    is_nash: bool
    is_stationary: bool
    tol: float
    start_value: float

    def to_dict(self) -> dict:
        return {
            'max_advantage': list(self.max_advantage),
            'is_nash': self.is_nash,
            'is_stationary': self.is_stationary,
            'tol': self.tol,
            'start_value': self.start_value,
        }


def _check_policy(game: MultiAgentTabularGame, policy: FactoredPolicy) -> None:
    if policy.action_counts != game.action_counts or policy.n_states != game.n_states:
        raise DimensionError(
            f"policy shape {policy.n_states}x{policy.action_counts} does not match "
            f"game {game.n_states}x{game.action_counts}"
        )


def _average_over_others(values: NDArray[np.float64], policy: FactoredPolicy, agent: int) -> NDArray[np.float64]:
    """``E_{a_-i ~ pi_-i(.|s)} values(s, a_i, a_-i)`` as an (S, A_i) table."""
    counts = policy.action_counts
    n_states = values.shape[0]
    shaped = values.reshape((n_states,) + counts)
    for j, table in enumerate(policy.tables):
        if j == agent:
            continue
        shape = [n_states] + [1] * len(counts)
        shape[j + 1] = counts[j]
        shaped = shaped * table.reshape(shape)
    others = tuple(j + 1 for j in range(len(counts)) if j != agent)
    return shaped.sum(axis=others)


def _qbar(q: NDArray[np.float64], policy: FactoredPolicy, agent: int, beta: float) -> NDArray[np.float64]:
    # Qbar is not shift-invariant, so the exponent is bounded instead of shifted
    peak = float(np.max(beta * q))
    if peak > SAFE_EXPONENT:
        raise NumericInputError(
            f"exp(beta * Q) overflows (beta * max Q = {peak:.4g}); compare actions with the advantage table instead"
        )
    return _average_over_others(np.exp(beta * q), policy, agent) / beta


def _abar(q: NDArray[np.float64], v: NDArray[np.float64], policy: FactoredPolicy, agent: int,
          beta: float) -> NDArray[np.float64]:
    return _average_over_others(np.exp(beta * (q - v[:, None])), policy, agent) / beta


def solve_optimistic_values(game: MultiAgentTabularGame, policy: FactoredPolicy, beta: float,
                            tol: float = VALUE_TOL, max_iter: int = VALUE_MAX_ITER) -> OptimisticEvaluation:
    """
    Fixed-point iteration of the optimistic Bellman operator.

    Starts from ``V = 0`` and stops once the sup-norm change is at most
    ``tol * (1 - gamma) / gamma``, which bounds the distance to the fixed point
    by ``tol``.

    Args:
        game: The game to evaluate.
        policy: Baseline factored policy.
        beta: Risk-seeking temperature, > 0.
        tol: Target accuracy of ``V``.
        max_iter: Iteration budget.

    Returns:
        OptimisticEvaluation: V, Q, the tilted auxiliary joint policy and the
        per-agent averaged optimistic Q and advantage tables.

    Raises:
        NonConvergenceError: When ``max_iter`` iterations do not meet ``tol``.
    """
    params = RiskParams(beta)
    if tol <= 0:
        raise PreconditionError("tol must be positive")
    _check_policy(game, policy)

    joint = joint_from_factored(policy)
    gamma = game.gamma
    threshold = tol * (1.0 - gamma) / gamma if gamma > 0 else math.inf

    v = np.zeros(game.n_states)
    deltas = []
    delta = math.inf
    for iteration in range(1, max_iter + 1):
        q = game.reward + gamma * game.expected_next(v)
        v_next = soft_values(joint, q, params.beta)
        delta = float(np.max(np.abs(v_next - v)))
        deltas.append(delta)
        v = v_next
        if delta <= threshold:
            break
    else:
        raise NonConvergenceError("optimistic value iteration did not converge", delta, max_iter)

    q = game.reward + gamma * game.expected_next(v)
    v_final = soft_values(joint, q, params.beta)
    residual = float(np.max(np.abs(v_final - v)))
    logger.debug("optimistic values converged in %d iterations (beta=%g, residual=%.2e)", iteration, beta, residual)

    return OptimisticEvaluation(
        beta=params.beta,
        v=v_final,
        q=q,
        aux_policy=tilted_rows(joint, q, params.beta),
        qbar=tuple(_qbar(q, policy, i, params.beta) for i in range(policy.n_agents)),
        abar=tuple(_abar(q, v_final, policy, i, params.beta) for i in range(policy.n_agents)),
        residual=residual,
        iterations=iteration,
        deltas=tuple(deltas),
    )


def averaged_optimistic_q(evaluation: OptimisticEvaluation, policy: FactoredPolicy, agent: int) -> NDArray[np.float64]:
    """``Qbar_i(s, a_i) = beta^-1 E_{a_-i ~ pi_-i} exp(beta Q(s, a_i, a_-i))``."""
    return _qbar(evaluation.q, policy, agent, evaluation.beta)


def averaged_optimistic_advantage(evaluation: OptimisticEvaluation, policy: FactoredPolicy,
                                  agent: int) -> NDArray[np.float64]:
    """``Abar_i(s, a_i) = beta^-1 E_{a_-i ~ pi_-i} exp(beta (Q - V)(s, a_i, a_-i))``."""
    return _abar(evaluation.q, evaluation.v, policy, agent, evaluation.beta)


def averaged_risk_neutral_q(q0: NDArray[np.float64], policy: FactoredPolicy, agent: int) -> NDArray[np.float64]:
    """Linear average ``E_{a_-i ~ pi_-i} Q0(s, a_i, a_-i)``, the beta -> 0 counterpart of Qbar."""
    return _average_over_others(q0, policy, agent)


def exact_policy_gradient(game: MultiAgentTabularGame, policy: FactoredPolicy, beta: float,
                          start: Optional[ArrayLike] = None) -> GradientTable:
    """
    Exact gradient of ``E_{s0 ~ start} V(s0)`` in the direct parametrization.

    ``g_i[s, a_i] = d_hat(s) * Abar_i(s, a_i) / (1 - gamma)`` with ``d_hat`` the
    discounted visitation of the auxiliary policy from ``start`` (``rho`` by
    default).

    Raises:
        BoundaryPolicyError: When some action probability is zero; use
            ``finite_difference_gradient`` for directional derivatives there.
    """
    _check_policy(game, policy)
    if not policy.is_interior:
        raise BoundaryPolicyError("exact gradient needs every action probability to be positive")
    start = game.rho if start is None else np.asarray(start, dtype=float)
    evaluation = solve_optimistic_values(game, policy, beta, tol=FINITE_DIFFERENCE_TOL)
    d_hat = visitation_distribution(game, evaluation.aux_policy, start)
    scale = d_hat[:, None] / (1.0 - game.gamma)
    return GradientTable(tuple(scale * abar for abar in evaluation.abar))


def risk_neutral_policy_gradient(game: MultiAgentTabularGame, policy: FactoredPolicy,
                                 start: Optional[ArrayLike] = None) -> GradientTable:
    """Classical gradient ``d_pi(s) E_{a_-i} Q0(s, a_i, a_-i) / (1 - gamma)``."""
    _check_policy(game, policy)
    start = game.rho if start is None else np.asarray(start, dtype=float)
    joint = joint_from_factored(policy)
    q0 = risk_neutral_evaluation(game, joint).q
    d = visitation_distribution(game, joint, start)
    scale = d[:, None] / (1.0 - game.gamma)
    return GradientTable(tuple(scale * averaged_risk_neutral_q(q0, policy, i) for i in range(policy.n_agents)))


def start_value(game: MultiAgentTabularGame, policy: FactoredPolicy, beta: float, start: ArrayLike,
                tol: float = FINITE_DIFFERENCE_TOL) -> float:
    return float(np.asarray(start, dtype=float) @ solve_optimistic_values(game, policy, beta, tol=tol).v)


def finite_difference_gradient(game: MultiAgentTabularGame, policy: FactoredPolicy, beta: float,
                               start: Optional[ArrayLike], direction: Sequence[ArrayLike], h: float) -> float:
    """
    Central difference of ``E_{s0 ~ start} V`` along a sum-zero direction.

    Raises:
        StepSizeError: When ``policy +- h * direction`` leaves the simplex.
    """
    _check_policy(game, policy)
    start = game.rho if start is None else np.asarray(start, dtype=float)
    direction = tuple(np.asarray(d, dtype=float) for d in direction)
    if len(direction) != policy.n_agents or any(d.shape != t.shape for d, t in zip(direction, policy.tables)):
        raise DimensionError("direction must have one table per agent shaped like the policy")
    if any(np.max(np.abs(d.sum(axis=1))) > 1e-12 * max(1.0, np.max(np.abs(d))) for d in direction):
        raise PreconditionError("direction rows must sum to zero")
    if h <= 0:
        raise StepSizeError("step size must be positive")

    plus = tuple(t + h * d for t, d in zip(policy.tables, direction))
    minus = tuple(t - h * d for t, d in zip(policy.tables, direction))
    if any(np.any(t < 0) for t in plus + minus):
        raise StepSizeError(f"step h={h} leaves the simplex")

    forward = start_value(game, FactoredPolicy(plus), beta, start)
    backward = start_value(game, FactoredPolicy(minus), beta, start)
    return (forward - backward) / (2.0 * h)


def directional_derivative(gradient: GradientTable, direction: Sequence[ArrayLike]) -> float:
    """Derivative of the start value along ``direction`` predicted by an exact gradient."""
    return gradient.dot(direction)


def relative_directional_error(approx: float, exact: float, gradient: GradientTable) -> float:
    """``|approx - exact|`` relative to ``max(|exact|, RELATIVE_ERROR_FLOOR * ||tangent gradient||)``."""
    scale = max(abs(exact), RELATIVE_ERROR_FLOOR * gradient.tangent().norm(), 1e-12)
    return abs(approx - exact) / scale


def project_rows_to_simplex(rows: ArrayLike) -> NDArray[np.float64]:
    """Euclidean projection of every row onto the probability simplex (sort and threshold)."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if not np.all(np.isfinite(rows)):
        raise PreconditionError("cannot project non-finite vectors")
    # the projection is invariant to adding a constant to a row
    shifted = rows - rows.max(axis=1, keepdims=True)
    n_rows, n_cols = shifted.shape
    ordered = np.sort(shifted, axis=1)[:, ::-1]
    cssv = np.cumsum(ordered, axis=1) - 1.0
    ind = np.arange(1, n_cols + 1)
    support = np.count_nonzero(ordered - cssv / ind > 0, axis=1)
    theta = cssv[np.arange(n_rows), support - 1] / support
    return np.maximum(shifted - theta[:, None], 0.0)


def project_to_simplex(v: ArrayLike) -> NDArray[np.float64]:
    return project_rows_to_simplex(np.asarray(v, dtype=float).reshape(1, -1))[0]


def unilateral_advantages(game: MultiAgentTabularGame, policy: FactoredPolicy, q0: NDArray[np.float64],
                          v0: NDArray[np.float64], agent: int) -> NDArray[np.float64]:
    """``A(s, a_i, pi_-i(s))`` for a deterministic policy, as an (S, A_i) table."""
    actions = policy.actions()
    n_actions = game.action_counts[agent]
    deviations = np.repeat(actions[:, None, :], n_actions, axis=1)
    deviations[:, :, agent] = np.arange(n_actions)
    flat = np.ravel_multi_index(tuple(deviations[..., k] for k in range(game.n_agents)), game.action_counts)
    return np.take_along_axis(q0, flat, axis=1) - v0[:, None]


def check_deterministic_nash(game: MultiAgentTabularGame, policy: FactoredPolicy, tol: float = NASH_TOL) -> NashReport:
    """
    Certify a deterministic product policy as a Nash equilibrium.

    For a deterministic policy the auxiliary policy equals the policy, so the
    optimistic and classical values coincide and the check runs on ``V0``/``Q0``.
    No agent may gain more than ``tol`` by a one-step unilateral deviation in
    any state; first-order stationarity is equivalent for such policies.
    """
    _check_policy(game, policy)
    if not policy.is_deterministic:
        raise PreconditionError("Nash certification needs a deterministic policy")
    joint = joint_from_factored(policy)
    evaluation = risk_neutral_evaluation(game, joint)

    maxima = tuple(
        float(unilateral_advantages(game, policy, evaluation.q, evaluation.v, i).max())
        for i in range(game.n_agents)
    )
    is_nash = all(m <= tol for m in maxima)
    return NashReport(
        max_advantage=maxima,
        is_nash=is_nash,
        is_stationary=is_nash,
        tol=tol,
        start_value=float(game.rho @ evaluation.v),
    )
