"""
Tabular multi-agent MDPs with identical rewards.

Joint actions are flattened row-major with agent 0 as the most significant
digit: for action counts ``(A_0, ..., A_{n-1})`` the joint index of
``(a_0, ..., a_{n-1})`` is ``np.ravel_multi_index(actions, counts)``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg

from .defaults import (
    DIRECT_SOLVE_MAX_STATES,
    DISTRIBUTION_ATOL,
    ITERATIVE_SOLVE_MAX_ITER,
    ITERATIVE_SOLVE_TOL,
)
from .exceptions import DimensionError, NonConvergenceError, PreconditionError

logger = logging.getLogger(__name__)

JointPolicy = NDArray[np.float64]

KERNEL_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class MultiAgentTabularGame:
    """
    Finite n-agent MDP with a shared reward.

    Exactly one of ``kernel`` (dense ``P[s, a, s']``) and ``next_state``
    (deterministic ``f[s, a]``) is given.
    """

    action_counts: tuple[int, ...]
    reward: NDArray[np.float64]
    gamma: float
    rho: NDArray[np.float64]
    kernel: Optional[NDArray[np.float64]] = None
    next_state: Optional[NDArray[np.int64]] = None
    episode_length: Optional[int] = None
    name: str = 'game'

    def __post_init__(self):
        counts = tuple(int(c) for c in self.action_counts)
        if not counts or min(counts) < 1:
            raise PreconditionError(f"action counts must be positive, got {counts}")
        object.__setattr__(self, 'action_counts', counts)

        reward = np.asarray(self.reward, dtype=float)
        rho = np.asarray(self.rho, dtype=float)
        n_joint = math.prod(counts)
        if reward.ndim != 2 or reward.shape[1] != n_joint:
            raise DimensionError(f"reward must have shape (S, {n_joint}), got {reward.shape}")
        if not np.all(np.isfinite(reward)):
            raise PreconditionError("reward table contains non-finite entries")
        n_states = reward.shape[0]
        if rho.shape != (n_states,):
            raise DimensionError(f"rho must have length {n_states}, got shape {rho.shape}")
        if np.any(rho < 0) or abs(rho.sum() - 1.0) > DISTRIBUTION_ATOL:
            raise PreconditionError("rho must be a probability vector")
        if not 0.0 <= self.gamma < 1.0:
            raise PreconditionError(f"gamma must lie in [0, 1), got {self.gamma}")

        if (self.kernel is None) == (self.next_state is None):
            raise PreconditionError("give exactly one of a dense kernel or a next-state table")
        if self.kernel is not None:
            kernel = np.asarray(self.kernel, dtype=float)
            if kernel.shape != (n_states, n_joint, n_states):
                raise DimensionError(f"kernel must have shape {(n_states, n_joint, n_states)}, got {kernel.shape}")
            if np.any(kernel < 0) or np.max(np.abs(kernel.sum(axis=2) - 1.0)) > KERNEL_ATOL:
                raise PreconditionError("every kernel row must be a probability vector")
            object.__setattr__(self, 'kernel', kernel)
        else:
            table = np.asarray(self.next_state)
            if table.shape != (n_states, n_joint) or not np.issubdtype(table.dtype, np.integer):
                raise DimensionError(f"next-state table must be an integer array of shape {(n_states, n_joint)}")
            if table.min() < 0 or table.max() >= n_states:
                raise PreconditionError("next-state table points outside the state space")
            object.__setattr__(self, 'next_state', table.astype(np.int64))

        if self.episode_length is not None and self.episode_length < 1:
            raise PreconditionError("episode_length must be positive")
        object.__setattr__(self, 'reward', reward)
        object.__setattr__(self, 'rho', rho)

    @property
    def n_agents(self) -> int:
        return len(self.action_counts)

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_joint(self) -> int:
        return self.reward.shape[1]

    @property
    def is_deterministic(self) -> bool:
        return self.next_state is not None

    @cached_property
    def transition(self) -> NDArray[np.float64]:
        """Dense kernel ``P[s, a, s']`` (built from the next-state table when deterministic)."""
        if self.kernel is not None:
            return self.kernel
        dense = np.zeros((self.n_states, self.n_joint, self.n_states))
        s_idx, a_idx = np.indices(self.next_state.shape)
        dense[s_idx, a_idx, self.next_state] = 1.0
        return dense

    @cached_property
    def joint_actions(self) -> NDArray[np.int64]:
        """Table of shape (n_joint, n_agents) listing each joint action's components."""
        return np.stack(np.unravel_index(np.arange(self.n_joint), self.action_counts), axis=1)

    def joint_index(self, actions: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(int(a) for a in actions), self.action_counts))

    def expected_next(self, values: NDArray[np.float64]) -> NDArray[np.float64]:
        """``E[values(s') | s, a]`` as an (S, J) table."""
        if self.next_state is not None:
            return values[self.next_state]
        return self.kernel @ values

    def policy_kernel(self, joint: JointPolicy) -> NDArray[np.float64]:
        """State-to-state matrix ``P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)``."""
        if self.next_state is not None:
            p_pi = np.zeros((self.n_states, self.n_states))
            rows = np.repeat(np.arange(self.n_states), self.n_joint)
            np.add.at(p_pi, (rows, self.next_state.ravel()), joint.ravel())
            return p_pi
        return np.einsum('sa,sat->st', joint, self.kernel)


@dataclass(frozen=True, eq=False)
class FactoredPolicy:
    """Per-agent tabular policies; ``tables[i][s, a_i] = pi_i(a_i | s)``."""

    tables: tuple[NDArray[np.float64], ...]

    def __post_init__(self):
        tables = tuple(np.asarray(t, dtype=float) for t in self.tables)
        if not tables:
            raise PreconditionError("a policy needs at least one agent")
        n_states = tables[0].shape[0]
        for i, table in enumerate(tables):
            if table.ndim != 2 or table.shape[0] != n_states:
                raise DimensionError(f"policy table of agent {i} has shape {table.shape}")
            if not np.all(np.isfinite(table)) or np.any(table < 0):
                raise PreconditionError(f"policy table of agent {i} has negative or non-finite entries")
            if np.max(np.abs(table.sum(axis=1) - 1.0)) > DISTRIBUTION_ATOL:
                raise PreconditionError(f"policy rows of agent {i} do not sum to 1")
        object.__setattr__(self, 'tables', tables)

    @classmethod
    def uniform(cls, action_counts: Sequence[int], n_states: int) -> FactoredPolicy:
        return cls(tuple(np.full((n_states, c), 1.0 / c) for c in action_counts))

    @classmethod
    def from_actions(cls, action_counts: Sequence[int], actions: ArrayLike) -> FactoredPolicy:
        """Deterministic policy from an (S, n_agents) table of action indices."""
        actions = np.asarray(actions, dtype=np.int64)
        tables = []
        for i, count in enumerate(action_counts):
            table = np.zeros((actions.shape[0], count))
            table[np.arange(actions.shape[0]), actions[:, i]] = 1.0
            tables.append(table)
        return cls(tuple(tables))

    @classmethod
    def random_interior(cls, action_counts: Sequence[int], n_states: int, rng: np.random.Generator,
                        floor: float = 0.2) -> FactoredPolicy:
        """Dirichlet rows mixed with uniform so every probability is at least ``floor / A_i``."""
        tables = []
        for count in action_counts:
            draws = rng.dirichlet(np.ones(count), size=n_states)
            tables.append((1.0 - floor) * draws + floor / count)
        return cls(tuple(tables))

    @property
    def n_agents(self) -> int:
        return len(self.tables)

    @property
    def n_states(self) -> int:
        return self.tables[0].shape[0]

    @property
    def action_counts(self) -> tuple[int, ...]:
        return tuple(t.shape[1] for t in self.tables)

    @property
    def is_deterministic(self) -> bool:
        return all(np.all((t == 0.0) | (t == 1.0)) for t in self.tables)

    @property
    def is_interior(self) -> bool:
        return all(np.all(t > 0.0) for t in self.tables)

    def actions(self) -> NDArray[np.int64]:
        """Most likely action of every agent in every state, lowest index on ties."""
        return np.stack([np.argmax(t, axis=1) for t in self.tables], axis=1)

    def mixed_with_uniform(self, epsilon: float) -> FactoredPolicy:
        """Behaviour policy ``(1 - epsilon) * pi + epsilon * uniform``."""
        return FactoredPolicy(tuple((1.0 - epsilon) * t + epsilon / t.shape[1] for t in self.tables))

    def to_dict(self) -> dict:
        return {'tables': [t.tolist() for t in self.tables]}

    @classmethod
    def from_dict(cls, data: dict) -> FactoredPolicy:
        return cls(tuple(np.asarray(t, dtype=float) for t in data['tables']))


class StreamPurpose(IntEnum):
    ENVIRONMENT = 0
    ACTIONS = 1
    EXPLORATION = 2
    POLICY_INIT = 3
    GAME = 4
    DIRECTIONS = 5


@dataclass(eq=False)
class RngStream:
    """
    Reproducible random stream identified by ``(seed, run, agent, purpose)``.

    Backed by numpy's counter-based Philox bit generator, seeded through a
    ``SeedSequence`` whose spawn key is the stream id, so identical ids give
    identical draws on every platform and distinct ids never share state.
    """

    seed: int
    run: int = 0
    agent: int = 0
    purpose: StreamPurpose = StreamPurpose.ENVIRONMENT
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise PreconditionError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.run < 0 or self.agent < 0:
            raise PreconditionError("stream ids must be non-negative")
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.run, self.agent, int(self.purpose)))
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def spawn(self, *, run: Optional[int] = None, agent: Optional[int] = None,
              purpose: Optional[StreamPurpose] = None) -> RngStream:
        """Fresh stream with the same seed and the given id components replaced."""
        return RngStream(
            self.seed,
            self.run if run is None else run,
            self.agent if agent is None else agent,
            self.purpose if purpose is None else purpose,
        )

    def random(self, size=None):
        return self.generator.random(size)

    def choice(self, n: int, p: ArrayLike) -> int:
        return int(self.generator.choice(n, p=p))


@dataclass(frozen=True, eq=False)
class RiskNeutralEvaluation:
    v: NDArray[np.float64]
    q: NDArray[np.float64]


def joint_from_factored(policy: FactoredPolicy) -> JointPolicy:
    """Product policy ``pi(a|s) = prod_i pi_i(a_i|s)`` as an (S, J) table."""
    joint = policy.tables[0]
    for table in policy.tables[1:]:
        joint = (joint[:, :, None] * table[:, None, :]).reshape(joint.shape[0], -1)
    return joint


def marginalize(joint: JointPolicy, action_counts: Sequence[int], agent: int) -> NDArray[np.float64]:
    """Marginal ``pi_i(a_i|s)`` of one agent from an (S, J) joint table."""
    shaped = joint.reshape((joint.shape[0],) + tuple(action_counts))
    others = tuple(k + 1 for k in range(len(action_counts)) if k != agent)
    return shaped.sum(axis=others)


def _check_joint(game: MultiAgentTabularGame, joint: JointPolicy) -> JointPolicy:
    joint = np.asarray(joint, dtype=float)
    if joint.shape != (game.n_states, game.n_joint):
        raise DimensionError(f"joint policy must have shape {(game.n_states, game.n_joint)}, got {joint.shape}")
    return joint


def _solve_discounted(matrix: NDArray[np.float64], rhs: NDArray[np.float64], gamma: float) -> NDArray[np.float64]:
    """Solve ``x = rhs + gamma * matrix @ x``."""
    n = rhs.shape[0]
    if n <= DIRECT_SOLVE_MAX_STATES:
        return linalg.solve(np.eye(n) - gamma * matrix, rhs)

    x = rhs.copy()
    for iteration in range(1, ITERATIVE_SOLVE_MAX_ITER + 1):
        updated = rhs + gamma * (matrix @ x)
        residual = float(np.max(np.abs(updated - x)))
        x = updated
        if residual <= ITERATIVE_SOLVE_TOL:
            logger.debug("iterative discounted solve converged after %d iterations", iteration)
            return x
    raise NonConvergenceError("iterative discounted solve did not converge", residual, ITERATIVE_SOLVE_MAX_ITER)


def visitation_distribution(game: MultiAgentTabularGame, joint: JointPolicy, start: ArrayLike) -> NDArray[np.float64]:
    """
    Normalized discounted state occupancy ``d(s) = (1 - gamma) sum_t gamma^t Pr(s_t = s)``.

    Solves ``d = (1 - gamma) start + gamma P_pi^T d`` directly for small state
    spaces and by fixed-point iteration above ``DIRECT_SOLVE_MAX_STATES``.
    """
    joint = _check_joint(game, joint)
    start = np.asarray(start, dtype=float)
    if start.shape != (game.n_states,):
        raise DimensionError(f"start distribution must have length {game.n_states}")
    p_pi = game.policy_kernel(joint)
    d = _solve_discounted(p_pi.T, (1.0 - game.gamma) * start, game.gamma)
    return d / d.sum()


def risk_neutral_evaluation(game: MultiAgentTabularGame, joint: JointPolicy) -> RiskNeutralEvaluation:
    """Classical ``V0`` and ``Q0`` of a joint policy."""
    joint = _check_joint(game, joint)
    r_pi = np.sum(joint * game.reward, axis=1)
    v = _solve_discounted(game.policy_kernel(joint), r_pi, game.gamma)
    q = game.reward + game.gamma * game.expected_next(v)
    return RiskNeutralEvaluation(v=v, q=q)


def policy_return(game: MultiAgentTabularGame, joint: JointPolicy, horizon: Optional[int] = None) -> float:
    """
    Expected return of a joint policy from ``rho``.

    Without a horizon this is the discounted value ``E_rho V0``; with one it is
    the undiscounted expected sum of rewards over ``horizon`` steps.
    """
    joint = _check_joint(game, joint)
    if horizon is None:
        return float(game.rho @ risk_neutral_evaluation(game, joint).v)
    r_pi = np.sum(joint * game.reward, axis=1)
    p_pi = game.policy_kernel(joint)
    total = np.zeros(game.n_states)
    for _ in range(horizon):
        total = r_pi + p_pi @ total
    return float(game.rho @ total)


def sample_step(game: MultiAgentTabularGame, state: int, joint_action: int, rng: RngStream) -> tuple[int, float]:
    """Draw ``s' ~ P(.|s, a)`` and return it with the reward ``r(s, a)``."""
    if not 0 <= state < game.n_states:
        raise IndexError(f"state {state} out of range for {game.n_states} states")
    if not 0 <= joint_action < game.n_joint:
        raise IndexError(f"joint action {joint_action} out of range for {game.n_joint} joint actions")
    reward = float(game.reward[state, joint_action])
    if game.next_state is not None:
        return int(game.next_state[state, joint_action]), reward
    return rng.choice(game.n_states, game.kernel[state, joint_action]), reward


def random_game(rng: np.random.Generator, n_states: int, action_counts: Sequence[int], gamma: float,
                deterministic: bool = False, reward_range: tuple[float, float] = (-1.0, 1.0)) -> MultiAgentTabularGame:
    """Random game with uniform rewards, Dirichlet kernels and a strictly positive ``rho``."""
    n_joint = math.prod(action_counts)
    reward = rng.uniform(reward_range[0], reward_range[1], size=(n_states, n_joint))
    rho = rng.dirichlet(np.ones(n_states))
    rho = 0.5 * rho + 0.5 / n_states
    if deterministic:
        next_state = rng.integers(0, n_states, size=(n_states, n_joint))
        return MultiAgentTabularGame(tuple(action_counts), reward, gamma, rho, next_state=next_state, name='random')
    kernel = rng.dirichlet(np.ones(n_states), size=(n_states, n_joint))
    kernel /= kernel.sum(axis=2, keepdims=True)
    return MultiAgentTabularGame(tuple(action_counts), reward, gamma, rho, kernel=kernel, name='random')


def game_to_dict(game: MultiAgentTabularGame) -> dict:
    data = {
        'kind': 'tabular',
        'name': game.name,
        'action_counts': list(game.action_counts),
        'gamma': game.gamma,
        'rho': game.rho.tolist(),
        'reward': game.reward.tolist(),
        'episode_length': game.episode_length,
    }
    if game.next_state is not None:
        data['next_state'] = game.next_state.tolist()
    else:
        data['transition'] = game.kernel.tolist()
    return data


def game_from_dict(data: dict) -> MultiAgentTabularGame:
    allowed = {'kind', 'name', 'action_counts', 'gamma', 'rho', 'reward', 'episode_length', 'next_state', 'transition'}
    unknown = set(data) - allowed
    if unknown:
        raise PreconditionError(f"unknown game fields: {sorted(unknown)}")
    return MultiAgentTabularGame(
        action_counts=tuple(data['action_counts']),
        reward=np.asarray(data['reward'], dtype=float),
        gamma=float(data['gamma']),
        rho=np.asarray(data['rho'], dtype=float),
        kernel=None if 'transition' not in data else np.asarray(data['transition'], dtype=float),
        next_state=None if 'next_state' not in data else np.asarray(data['next_state'], dtype=np.int64),
        episode_length=data.get('episode_length'),
        name=data.get('name', 'game'),
    )


def save_game(game: MultiAgentTabularGame, path: Path) -> None:
    Path(path).write_text(json.dumps(game_to_dict(game), indent=2))


def load_game(path: Path) -> MultiAgentTabularGame:
    return game_from_dict(json.loads(Path(path).read_text()))
