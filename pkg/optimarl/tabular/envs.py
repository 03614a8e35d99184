"""
Benchmark environments.

- A two-agent toroidal gridworld: agent 0 moves the row coordinate ``x``, agent 1
  the column coordinate ``y``, each by -1, 0 or +1 with wraparound. Cells are
  labelled 1..size, stored 0-indexed as ``s = (x - 1) * size + (y - 1)``.
- A discretized cooperative ball-balancing table. Both agents push their end
  of the table; the difference of their force levels tilts it, the tilt
  accelerates the ball, and position/velocity are integer bin indices.
- Single-state repeated matrix games with a penalty structure.
"""

from __future__ import annotations

import math
from typing import Literal, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .exceptions import ConfigError
from .mdp import FactoredPolicy, MultiAgentTabularGame, game_from_dict

GRIDWORLD_REWARDS = (
    (-10.0, -10.0, -10.0, 0.0),
    (-10.0, 10.0, -10.0, 0.0),
    (-10.0, -10.0, 0.0, 0.0),
    (0.0, 0.0, 0.0, 5.0),
)
GRID_MOVES = (-1, 0, 1)

CLIMBING_GAME = ((11.0, -30.0, 0.0), (-30.0, 7.0, 6.0), (0.0, 0.0, 5.0))


def penalty_game(penalty: float) -> tuple[tuple[float, ...], ...]:
    return ((10.0, 0.0, penalty), (0.0, 2.0, 0.0), (penalty, 0.0, 10.0))


class GridworldConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    size: int = Field(default=4, ge=2)
    reward_table: tuple[tuple[float, ...], ...] = GRIDWORLD_REWARDS
    reward_timing: Literal['on_arrival', 'on_departure'] = 'on_arrival'
    action_noise: float = Field(default=0.0, ge=0.0, lt=1.0)
    gamma: float = Field(default=0.9, ge=0.0, lt=1.0)
    rho: Optional[tuple[float, ...]] = None
    episode_length: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode='after')
    def _shapes(self):
        if len(self.reward_table) != self.size or any(len(row) != self.size for row in self.reward_table):
            raise ValueError(f"reward_table must be {self.size}x{self.size}")
        if self.rho is not None and len(self.rho) != self.size * self.size:
            raise ValueError(f"rho must have {self.size * self.size} entries")
        return self


class BallBalanceConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    position_bins: int = Field(default=21, ge=3)
    velocity_bins: int = Field(default=11, ge=3)
    tilt_levels: int = Field(default=5, ge=3)
    force_levels: int = Field(default=3, ge=2)
    velocity_gain: int = Field(default=1, ge=1)
    episode_length: int = Field(default=200, ge=1)
    center_reward: float = 1.0
    distance_cost: float = Field(default=1.0, ge=0.0)
    fall_penalty: float = Field(default=5.0, ge=0.0)
    gamma: float = Field(default=0.95, ge=0.0, lt=1.0)
    start_spread: int = Field(default=5, ge=0)

    @field_validator('position_bins', 'velocity_bins', 'tilt_levels')
    @classmethod
    def _odd(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("bin counts must be odd so that zero is a bin centre")
        return value

    @model_validator(mode='after')
    def _spread(self):
        if self.start_spread > self.max_position:
            raise ValueError("start_spread exceeds the table half-width")
        return self

    @property
    def max_position(self) -> int:
        return (self.position_bins - 1) // 2

    @property
    def max_velocity(self) -> int:
        return (self.velocity_bins - 1) // 2

    @property
    def max_tilt(self) -> int:
        return (self.tilt_levels - 1) // 2


def _validated(model: type[BaseModel], config) -> BaseModel:
    if isinstance(config, model):
        return config
    try:
        return model.model_validate(config or {})
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def gridworld_state(x: int, y: int, size: int = 4) -> int:
    """State index of the 1-indexed cell ``(x, y)``."""
    return (x - 1) * size + (y - 1)


def gridworld_cell(state: int, size: int = 4) -> tuple[int, int]:
    return state // size + 1, state % size + 1


def build_gridworld(config: Optional[GridworldConfig] = None) -> MultiAgentTabularGame:
    """
    Two-agent gridworld with ``x' = ((x - 1 + a_x) mod size) + 1`` and likewise for ``y``.

    With ``action_noise = eps`` each agent's executed move is resampled uniformly
    with probability ``eps``; the kernel becomes stochastic and the on-arrival
    reward is the expected reward of the cell entered.
    """
    config = _validated(GridworldConfig, config)
    size = config.size
    table = np.asarray(config.reward_table, dtype=float)
    n_states = size * size
    n_moves = len(GRID_MOVES)
    n_joint = n_moves * n_moves

    rows, cols = np.divmod(np.arange(n_states), size)
    moves = np.asarray(GRID_MOVES)
    next_rows = (rows[:, None] + np.repeat(moves, n_moves)[None, :]) % size
    next_cols = (cols[:, None] + np.tile(moves, n_moves)[None, :]) % size
    next_state = next_rows * size + next_cols

    rho = np.full(n_states, 1.0 / n_states) if config.rho is None else np.asarray(config.rho, dtype=float)
    if config.action_noise == 0.0:
        if config.reward_timing == 'on_arrival':
            reward = table.ravel()[next_state]
        else:
            reward = np.repeat(table.ravel()[:, None], n_joint, axis=1)
        return MultiAgentTabularGame(
            (n_moves, n_moves), reward, config.gamma, rho,
            next_state=next_state, episode_length=config.episode_length, name='gridworld',
        )

    eps = config.action_noise
    executed = (1.0 - eps) * np.eye(n_moves) + eps / n_moves
    executed_joint = np.kron(executed, executed)
    deterministic = np.zeros((n_states, n_joint, n_states))
    s_idx, a_idx = np.indices(next_state.shape)
    deterministic[s_idx, a_idx, next_state] = 1.0
    kernel = np.einsum('ae,set->sat', executed_joint, deterministic)
    if config.reward_timing == 'on_arrival':
        reward = kernel @ table.ravel()
    else:
        reward = np.repeat(table.ravel()[:, None], n_joint, axis=1)
    return MultiAgentTabularGame(
        (n_moves, n_moves), reward, config.gamma, rho,
        kernel=kernel, episode_length=config.episode_length, name='gridworld',
    )


def _team_q(game: MultiAgentTabularGame, allowed: NDArray[np.bool_], tol: float,
            max_iter: int) -> NDArray[np.float64]:
    """Optimal shared-reward Q over the joint actions ``allowed`` in each state (others are -inf)."""
    v = np.zeros(game.n_states)
    for _ in range(max_iter):
        q = np.where(allowed, game.reward + game.gamma * game.expected_next(v), -np.inf)
        v_next = q.max(axis=1)
        converged = np.max(np.abs(v_next - v)) <= tol
        v = v_next
        if converged:
            break
    return np.where(allowed, game.reward + game.gamma * game.expected_next(v), -np.inf)


def _greedy_joint(game: MultiAgentTabularGame, q: NDArray[np.float64]) -> FactoredPolicy:
    best = np.argmax(q >= q.max(axis=1, keepdims=True) - 1e-9, axis=1)
    return FactoredPolicy.from_actions(game.action_counts, game.joint_actions[best])


def gridworld_target_policy(game: MultiAgentTabularGame, target: tuple[int, int], size: int = 4,
                            tol: float = 1e-13, max_iter: int = 10_000) -> FactoredPolicy:
    """
    Deterministic policy that moves to ``target`` and then stays.

    When staying at the target loses nothing against the unconstrained team
    optimum, the team-optimal route is taken; that policy is globally optimal
    and so a Nash equilibrium. Otherwise every joint action off the target
    must shorten the step distance to it, and the most rewarding shortest path
    is taken. Ties go to the lowest joint index.
    """
    target_state = gridworld_state(*target, size)
    stay = game.joint_index((GRID_MOVES.index(0),) * game.n_agents)

    stay_only = np.ones((game.n_states, game.n_joint), dtype=bool)
    stay_only[target_state] = False
    stay_only[target_state, stay] = True
    constrained = _team_q(game, stay_only, tol, max_iter)
    unconstrained = _team_q(game, np.ones_like(stay_only), tol, max_iter)
    if np.all(constrained.max(axis=1) >= unconstrained.max(axis=1) - 1e-9):
        return _greedy_joint(game, constrained)

    nominal = game.next_state if game.is_deterministic else game.transition.argmax(axis=2)
    distance = np.full(game.n_states, np.inf)
    distance[target_state] = 0.0
    for _ in range(game.n_states):
        distance = np.minimum(distance, 1.0 + distance[nominal].min(axis=1))
        distance[target_state] = 0.0

    allowed = distance[nominal] == distance[:, None] - 1.0
    allowed[~allowed.any(axis=1)] = True
    allowed[target_state] = False
    allowed[target_state, stay] = True
    return _greedy_joint(game, _team_q(game, allowed, tol, max_iter))


def ball_state(position: int, velocity: int, config: Optional[BallBalanceConfig] = None) -> int:
    """State index of the signed bin offsets ``(position, velocity)`` from the table centre."""
    config = _validated(BallBalanceConfig, config)
    return (position + config.max_position) * config.velocity_bins + (velocity + config.max_velocity)


def ball_coordinates(state: int, config: Optional[BallBalanceConfig] = None) -> tuple[int, int]:
    config = _validated(BallBalanceConfig, config)
    p_idx, v_idx = divmod(state, config.velocity_bins)
    return p_idx - config.max_position, v_idx - config.max_velocity


def ball_step(position: int, velocity: int, forces: Sequence[int],
              config: BallBalanceConfig) -> tuple[int, int, float]:
    """One step of the table dynamics; returns the next ``(position, velocity)`` and the reward."""
    tilt = max(-config.max_tilt, min(config.max_tilt, forces[0] - forces[1]))
    velocity = max(-config.max_velocity, min(config.max_velocity, velocity + config.velocity_gain * tilt))
    position = position + velocity
    if abs(position) > config.max_position:
        # fell off an edge: penalty, then the ball is put back at rest in the centre
        return 0, 0, -config.fall_penalty
    reward = config.center_reward - config.distance_cost * abs(position) / config.max_position
    return position, velocity, reward


def build_ball_balancing(config: Optional[BallBalanceConfig] = None) -> MultiAgentTabularGame:
    """
    Deterministic discretized ball-balancing game.

    Agent 0 pushes the left end and agent 1 the right end with a force level
    in ``0..force_levels-1``. The tilt is the clamped level difference; it
    changes the velocity by ``velocity_gain * tilt`` bins per step and the
    position moves by the new velocity. ``rho`` is uniform over resting
    states within ``start_spread`` bins of the centre.
    """
    config = _validated(BallBalanceConfig, config)
    n_states = config.position_bins * config.velocity_bins
    counts = (config.force_levels, config.force_levels)
    n_joint = math.prod(counts)

    next_state = np.zeros((n_states, n_joint), dtype=np.int64)
    reward = np.zeros((n_states, n_joint))
    for state in range(n_states):
        position, velocity = ball_coordinates(state, config)
        for joint, forces in enumerate(np.ndindex(*counts)):
            p_next, v_next, r = ball_step(position, velocity, forces, config)
            next_state[state, joint] = ball_state(p_next, v_next, config)
            reward[state, joint] = r

    rho = np.zeros(n_states)
    for position in range(-config.start_spread, config.start_spread + 1):
        rho[ball_state(position, 0, config)] = 1.0
    rho /= rho.sum()
    return MultiAgentTabularGame(
        counts, reward, config.gamma, rho,
        next_state=next_state, episode_length=config.episode_length, name='ball_balancing',
    )


def ball_trajectory(config: Optional[BallBalanceConfig], start: tuple[int, int],
                    forces: Sequence[Sequence[int]]) -> list[dict]:
    """Replay a force sequence through the built game and return the visited coordinates and rewards."""
    config = _validated(BallBalanceConfig, config)
    game = build_ball_balancing(config)
    state = ball_state(*start, config)
    steps = []
    for pair in forces:
        joint = game.joint_index(pair)
        reward = float(game.reward[state, joint])
        state = int(game.next_state[state, joint])
        position, velocity = ball_coordinates(state, config)
        steps.append({'position': position, 'velocity': velocity, 'reward': reward})
    return steps


def build_matrix_game(payoff: Sequence[Sequence[float]], gamma: float = 0.0) -> MultiAgentTabularGame:
    """Repeated two-agent matrix game on a single state; ``payoff[a_0][a_1]`` is the shared reward."""
    table = np.asarray(payoff, dtype=float)
    if table.ndim != 2:
        raise ConfigError("payoff must be a matrix")
    return MultiAgentTabularGame(
        table.shape, table.reshape(1, -1), gamma, np.ones(1),
        next_state=np.zeros((1, table.size), dtype=np.int64), episode_length=1, name='matrix',
    )


def build_game(data: dict) -> MultiAgentTabularGame:
    """Build a game from its JSON description, dispatching on ``kind``."""
    data = dict(data)
    kind = data.pop('kind', 'tabular')
    if kind == 'gridworld':
        return build_gridworld(_validated(GridworldConfig, data))
    if kind == 'ball_balancing':
        return build_ball_balancing(_validated(BallBalanceConfig, data))
    if kind == 'matrix':
        return build_matrix_game(data['payoff'], data.get('gamma', 0.0))
    if kind == 'tabular':
        return game_from_dict(data)
    raise ConfigError(f"unknown game kind {kind!r}")


def grid_heatmap(visitation: NDArray[np.float64], size: int = 4) -> NDArray[np.float64]:
    """Reshape a gridworld state vector into a size x size array indexed ``[x - 1, y - 1]``."""
    return np.asarray(visitation, dtype=float).reshape(size, size)
