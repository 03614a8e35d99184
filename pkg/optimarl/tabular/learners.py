"""
Decentralized learners.

Each agent observes the shared state, its own action and the shared reward,
and keeps only its own tables. One coordinator advances the environment and
draws every agent's action from that agent's own random stream, so runs are
reproducible from ``(seed, run, agent, purpose)`` alone.

- ``optimistic_evaluation_run``: stochastic approximation of the averaged
  optimistic Q-table of a fixed policy through the auxiliary variable
  ``Z = exp(beta * V)``.
- ``optimistic_policy_update_run``: outer loop alternating evaluation and a
  projected-gradient or greedy improvement.
- ``hysteretic_q_learning_run`` / ``decentralized_q_learning_run``: independent
  Q-learning baselines.
- ``exact_policy_update_run`` / ``risk_neutral_pg_run``: the same improvement
  steps driven by exact tables instead of samples.
"""

from __future__ import annotations

import logging
import math
import time
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import ConfigError, ScopeError
from .mdp import (
    FactoredPolicy,
    MultiAgentTabularGame,
    RngStream,
    StreamPurpose,
    joint_from_factored,
    policy_return,
    risk_neutral_evaluation,
    visitation_distribution,
)
from .optimistic import (
    _check_policy,
    averaged_risk_neutral_q,
    project_rows_to_simplex,
    solve_optimistic_values,
)
from .risk import RiskParams

logger = logging.getLogger(__name__)


class _LearnerConfig(BaseModel):
    """Learner settings; invalid values raise ``ConfigError`` like the environment configs."""

    model_config = ConfigDict(extra='forbid', frozen=True)

    def __init__(self, **data):
        try:
            super().__init__(**data)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc


class EvalConfig(_LearnerConfig):
    """
    Sample-based evaluation settings.

    ``stepsize_count='global'`` counts every step the agent has taken, ``'visit'``
    counts earlier updates of the entry being written (``(s, a_i)`` for ``qbar``,
    ``s`` for ``z``). ``average_from`` switches on per-entry averaging of the
    iterates written after that fraction of ``t_q``; the averages are returned.
    """

    t_q: int = Field(default=20_000, ge=1)
    alpha0: float = Field(default=0.5, gt=0.0, le=1.0)
    tau: float = Field(default=1e4, gt=0.0)
    constant_stepsize: bool = False
    stepsize_count: Literal['global', 'visit'] = 'global'
    stepsize_exponent: float = Field(default=1.0, gt=0.5, le=1.0)
    average_from: Optional[float] = Field(default=None, ge=0.0, lt=1.0)
    consistent_z: bool = True
    reset_period: Optional[int] = Field(default=None, ge=1)
    strict_deterministic: bool = False


class UpdateConfig(_LearnerConfig):
    mode: Literal['gradient', 'greedy'] = 'greedy'
    eta: float = Field(default=0.01, gt=0.0)
    iterations: int = Field(default=20, ge=1)
    epsilon_start: float = Field(default=0.3, ge=0.0, le=1.0)
    epsilon_end: float = Field(default=0.01, ge=0.0, le=1.0)
    warm_start: bool = True


class BaselineConfig(_LearnerConfig):
    alpha_up: float = Field(default=0.1, gt=0.0, le=1.0)
    alpha_down: float = Field(default=0.01, ge=0.0, le=1.0)
    epsilon_start: float = Field(default=0.3, ge=0.0, le=1.0)
    epsilon_end: float = Field(default=0.01, ge=0.0, le=1.0)
    episode_length: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode='after')
    def _rates(self):
        if self.alpha_down > self.alpha_up:
            raise ValueError(f"alpha_down ({self.alpha_down}) must not exceed alpha_up ({self.alpha_up})")
        return self


@dataclass(frozen=True)
class StepsizeSchedule:
    """
    ``alpha_n = alpha0 * (tau / (tau + n)) ** exponent``, or ``alpha0`` throughout when constant.

    ``n`` is the agent's step count, or the entry's visit count when ``per_visit``.
    """

    alpha0: float = 0.5
    tau: float = 1e4
    constant: bool = False
    exponent: float = 1.0
    per_visit: bool = False

    @classmethod
    def from_config(cls, config: EvalConfig) -> StepsizeSchedule:
        return cls(config.alpha0, config.tau, config.constant_stepsize, config.stepsize_exponent,
                   config.stepsize_count == 'visit')

    def __call__(self, n: int) -> float:
        if self.constant:
            return self.alpha0
        if self.exponent == 1.0:
            return self.alpha0 * self.tau / (self.tau + n)
        return self.alpha0 * (self.tau / (self.tau + n)) ** self.exponent


@dataclass(eq=False)
class AgentLearnerState:
    """
    One agent's optimistic learner: ``qbar[s, a_i]`` starts at 0 and ``z[s]`` at 1.

    ``visits`` and ``state_visits`` count the updates of each ``qbar`` and ``z`` entry.
    """

    agent: int
    qbar: NDArray[np.float64]
    z: NDArray[np.float64]
    beta: float
    gamma: float
    schedule: StepsizeSchedule
    step_count: int = 0
    visits: Optional[NDArray[np.int64]] = None
    state_visits: Optional[NDArray[np.int64]] = None

    def __post_init__(self):
        if self.visits is None:
            self.visits = np.zeros(self.qbar.shape, dtype=np.int64)
        if self.state_visits is None:
            self.state_visits = np.zeros(self.z.shape, dtype=np.int64)

    @classmethod
    def initial(cls, agent: int, game: MultiAgentTabularGame, beta: float,
                schedule: StepsizeSchedule) -> AgentLearnerState:
        return cls(
            agent=agent,
            qbar=np.zeros((game.n_states, game.action_counts[agent])),
            z=np.ones(game.n_states),
            beta=beta,
            gamma=game.gamma,
            schedule=schedule,
        )


@dataclass(eq=False)
class RunRecord:
    """Outcome of one seeded run. ``wall_clock`` stays in memory and is not serialized."""

    algorithm: str
    seed: int
    returns: list[float]
    final_policy: FactoredPolicy
    visitation: NDArray[np.float64]
    beta: Optional[float] = None
    config: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def final_return(self) -> float:
        return self.returns[-1] if self.returns else math.nan

    def to_dict(self) -> dict:
        return {
            'algorithm': self.algorithm,
            'seed': self.seed,
            'beta': self.beta,
            'config': self.config,
            'returns': list(self.returns),
            'final_policy': self.final_policy.to_dict(),
            'visitation': self.visitation.tolist(),
        }


def linear_anneal(k: int, total: int, start: float, end: float) -> float:
    if total <= 1:
        return start
    return start + (end - start) * k / (total - 1)


def _policy_metrics(game: MultiAgentTabularGame, policy: FactoredPolicy) -> tuple[float, NDArray[np.float64]]:
    joint = joint_from_factored(policy)
    return policy_return(game, joint, game.episode_length), visitation_distribution(game, joint, game.rho)


def optimistic_evaluation_run(game: MultiAgentTabularGame, policy: FactoredPolicy, config: EvalConfig,
                              rng: RngStream, beta: float, *, behavior: Optional[FactoredPolicy] = None,
                              learners: Optional[list[AgentLearnerState]] = None) -> list[AgentLearnerState]:
    """
    Sample-based optimistic policy evaluation.

    Runs ``config.t_q`` synchronous steps. After each step every agent updates
    its own entries at the visited ``(s_t, a_i_t)``:

        qbar_i(s_t, a_i_t) <- (1 - alpha) qbar_i + alpha * exp(beta r_t) * z(s_{t+1})^gamma / beta
        z(s_t)             <- (1 - alpha) z(s_t) + alpha * c * qbar_i(s_t, a_i_t)

    with ``c = beta`` when ``config.consistent_z`` (fixed point ``z = exp(beta V)``)
    and ``c = 1`` otherwise (fixed point scaled by ``beta^(-1 / (1 - gamma))``).
    ``alpha`` follows ``StepsizeSchedule``; with per-visit counting the ``z``
    update uses the count of ``s_t`` and the ``qbar`` update that of ``(s_t, a_i_t)``.

    Args:
        game: Environment; its kernel should be deterministic.
        policy: Factored policy under evaluation.
        config: Horizon, stepsizes, Z variant, optional periodic resets.
        rng: Root stream; environment and per-agent action streams are spawned from it.
        beta: Risk-seeking temperature.
        behavior: Policy actually executed, ``policy`` by default.
        learners: States to continue from; fresh tables when omitted.

    Returns:
        list[AgentLearnerState]: Updated learner state of every agent.

    Raises:
        ScopeError: On a stochastic kernel when ``config.strict_deterministic``.
    """
    beta = RiskParams(beta).beta
    _check_policy(game, policy)
    if not game.is_deterministic:
        if config.strict_deterministic:
            raise ScopeError("sample-based optimistic evaluation assumes deterministic transitions")
        logger.warning("running optimistic evaluation on a stochastic kernel; the learned tables are biased")
    if behavior is None:
        behavior = policy
    else:
        _check_policy(game, behavior)
        if behavior is not policy:
            logger.debug("behaviour policy differs from the evaluated policy")

    schedule = StepsizeSchedule.from_config(config)
    if learners is None:
        learners = [AgentLearnerState.initial(i, game, beta, schedule) for i in range(game.n_agents)]

    n_agents = game.n_agents
    gamma = game.gamma
    z_scale = beta if config.consistent_z else 1.0
    strides = [math.prod(game.action_counts[i + 1:]) for i in range(n_agents)]
    cdfs = []
    for table in behavior.tables:
        cdf = np.cumsum(table, axis=1)
        cdf[:, -1] = 1.0
        cdfs.append(cdf.tolist())
    exp_reward = (np.exp(beta * game.reward) / beta).tolist()
    next_rows = game.next_state.tolist() if game.is_deterministic else None

    env = rng.spawn(purpose=StreamPurpose.ENVIRONMENT)
    draws = [rng.spawn(agent=i, purpose=StreamPurpose.ACTIONS).random(config.t_q).tolist() for i in range(n_agents)]

    # plain lists keep the per-step loop cheap; written back at the end
    qbars = [learner.qbar.tolist() for learner in learners]
    zs = [learner.z.tolist() for learner in learners]
    steps = [learner.step_count for learner in learners]
    visits = [learner.visits.tolist() for learner in learners]
    state_visits = [learner.state_visits.tolist() for learner in learners]
    alpha0, tau, constant = schedule.alpha0, schedule.tau, schedule.constant
    exponent, per_visit = schedule.exponent, schedule.per_visit

    average_start = config.t_q if config.average_from is None else int(config.average_from * config.t_q)
    q_sums = [[[0.0] * len(row) for row in qbar] for qbar in qbars]
    q_counts = [[[0] * len(row) for row in qbar] for qbar in qbars]
    z_sums = [[0.0] * game.n_states for _ in range(n_agents)]
    z_counts = [[0] * game.n_states for _ in range(n_agents)]

    state = env.choice(game.n_states, game.rho)
    actions = [0] * n_agents
    for t in range(config.t_q):
        if config.reset_period and t > 0 and t % config.reset_period == 0:
            state = env.choice(game.n_states, game.rho)
        joint = 0
        for i in range(n_agents):
            a = bisect_right(cdfs[i][state], draws[i][t])
            actions[i] = a
            joint += a * strides[i]
        if next_rows is not None:
            next_state = next_rows[state][joint]
        else:
            next_state = env.choice(game.n_states, game.kernel[state, joint])
        target = exp_reward[state][joint]
        averaging = t >= average_start
        for i in range(n_agents):
            a = actions[i]
            if constant:
                alpha = alpha_z = alpha0
            elif per_visit:
                n = visits[i][state][a]
                m = state_visits[i][state]
                alpha = alpha0 * (tau / (tau + n)) ** exponent
                alpha_z = alpha0 * (tau / (tau + m)) ** exponent
            else:
                alpha = alpha_z = alpha0 * (tau / (tau + steps[i])) ** exponent
            z = zs[i]
            row = qbars[i][state]
            row[a] = (1.0 - alpha) * row[a] + alpha * target * z[next_state] ** gamma
            z[state] = (1.0 - alpha_z) * z[state] + alpha_z * z_scale * row[a]
            visits[i][state][a] += 1
            state_visits[i][state] += 1
            steps[i] += 1
            if averaging:
                q_sums[i][state][a] += row[a]
                q_counts[i][state][a] += 1
                z_sums[i][state] += z[state]
                z_counts[i][state] += 1
        state = next_state

    for i, learner in enumerate(learners):
        qbar, z = np.asarray(qbars[i]), np.asarray(zs[i])
        if config.average_from is not None:
            # entries not written since averaging began keep their last iterate
            counts = np.asarray(q_counts[i])
            qbar = np.where(counts > 0, np.asarray(q_sums[i]) / np.maximum(counts, 1), qbar)
            counts = np.asarray(z_counts[i])
            z = np.where(counts > 0, np.asarray(z_sums[i]) / np.maximum(counts, 1), z)
        learner.qbar = qbar
        learner.z = z
        learner.step_count = steps[i]
        learner.visits = np.asarray(visits[i], dtype=np.int64)
        learner.state_visits = np.asarray(state_visits[i], dtype=np.int64)
    return learners


def improve_policy(policy: FactoredPolicy, qbars: Sequence[NDArray[np.float64]], config: UpdateConfig,
                   gamma: float) -> FactoredPolicy:
    """
    One decentralized improvement step from per-agent averaged Q-tables.

    ``gradient``: ``pi_i(s) <- Proj(pi_i(s) + eta / (1 - gamma) * qbar_i(s, .))``.
    ``greedy``: ``pi_i(s)`` becomes the argmax of ``qbar_i(s, .)``, lowest index on ties.
    """
    tables = []
    for table, qbar in zip(policy.tables, qbars):
        if config.mode == 'gradient':
            tables.append(project_rows_to_simplex(table + config.eta / (1.0 - gamma) * qbar))
        else:
            greedy = np.zeros_like(table)
            greedy[np.arange(table.shape[0]), np.argmax(qbar, axis=1)] = 1.0
            tables.append(greedy)
    return FactoredPolicy(tuple(tables))


def optimistic_policy_update_run(game: MultiAgentTabularGame, initial: FactoredPolicy, eval_config: EvalConfig,
                                 update_config: UpdateConfig, rng: RngStream, beta: float,
                                 label: Optional[str] = None) -> RunRecord:
    """
    Sample-based optimistic policy update.

    Every outer iteration ``k`` evaluates the current policy with
    ``optimistic_evaluation_run`` under the behaviour policy
    ``(1 - eps_k) pi + eps_k uniform`` (``eps`` annealed linearly) on stream
    ``run=k``, then improves every agent's table from its own learned ``qbar``.
    """
    _check_policy(game, initial)
    started = time.perf_counter()
    policy = initial
    learners = None
    returns = []
    for k in range(update_config.iterations):
        eps = linear_anneal(k, update_config.iterations, update_config.epsilon_start, update_config.epsilon_end)
        behavior = policy.mixed_with_uniform(eps) if eps > 0 else policy
        learners = optimistic_evaluation_run(
            game, policy, eval_config, rng.spawn(run=k), beta,
            behavior=behavior, learners=learners if update_config.warm_start else None,
        )
        policy = improve_policy(policy, [learner.qbar for learner in learners], update_config, game.gamma)
        value, _ = _policy_metrics(game, policy)
        returns.append(value)
        logger.debug("outer iteration %d: eps=%.3f return=%.6g", k, eps, value)

    _, visitation = _policy_metrics(game, policy)
    return RunRecord(
        algorithm=label or f'optimistic_{update_config.mode}',
        seed=rng.seed,
        returns=returns,
        final_policy=policy,
        visitation=visitation,
        beta=beta,
        wall_clock=time.perf_counter() - started,
    )


def exact_policy_update_run(game: MultiAgentTabularGame, initial: FactoredPolicy, update_config: UpdateConfig,
                            beta: Optional[float], *, risk_neutral: bool = False, seed: int = 0,
                            label: Optional[str] = None) -> RunRecord:
    """
    Full-information counterpart of ``optimistic_policy_update_run``.

    Uses the exact averaged optimistic Q-tables, or with ``risk_neutral`` the
    linear averages of ``Q0`` (the ``beta -> 0`` limit of the same update).
    """
    _check_policy(game, initial)
    started = time.perf_counter()
    policy = initial
    returns = []
    for k in range(update_config.iterations):
        if risk_neutral:
            q0 = risk_neutral_evaluation(game, joint_from_factored(policy)).q
            qbars = [averaged_risk_neutral_q(q0, policy, i) for i in range(game.n_agents)]
        else:
            qbars = list(solve_optimistic_values(game, policy, beta).qbar)
        policy = improve_policy(policy, qbars, update_config, game.gamma)
        value, _ = _policy_metrics(game, policy)
        returns.append(value)

    _, visitation = _policy_metrics(game, policy)
    if risk_neutral:
        default_label = 'risk_neutral_pg'
    else:
        default_label = 'optimistic_pg' if update_config.mode == 'gradient' else 'optimistic_greedy'
    return RunRecord(
        algorithm=label or default_label,
        seed=seed,
        returns=returns,
        final_policy=policy,
        visitation=visitation,
        beta=None if risk_neutral else beta,
        wall_clock=time.perf_counter() - started,
    )


def risk_neutral_pg_run(game: MultiAgentTabularGame, initial: FactoredPolicy, update_config: UpdateConfig,
                        seed: int = 0) -> RunRecord:
    """Classical projected policy gradient with linearly averaged ``Q0``."""
    config = update_config.model_copy(update={'mode': 'gradient'})
    return exact_policy_update_run(game, initial, config, None, risk_neutral=True, seed=seed)


def _greedy_policy(game: MultiAgentTabularGame, q_tables: Sequence[Sequence[Sequence[float]]]) -> FactoredPolicy:
    actions = np.stack([np.argmax(np.asarray(q), axis=1) for q in q_tables], axis=1)
    return FactoredPolicy.from_actions(game.action_counts, actions)


def hysteretic_q_learning_run(game: MultiAgentTabularGame, config: BaselineConfig, episodes: int, rng: RngStream,
                              *, evaluate_every: int = 1, label: str = 'hysteretic_q',
                              q_out: Optional[list] = None) -> RunRecord:
    """
    Independent hysteretic Q-learning on each agent's own action.

    ``q_i(s, a_i) += rate * (r + gamma * max q_i(s', .) - q_i(s, a_i))`` with
    ``rate = alpha_up`` for nonnegative TD errors and ``alpha_down`` otherwise.
    Behaviour is epsilon-greedy, epsilon annealed linearly over episodes. The
    greedy joint policy is scored every ``evaluate_every`` episodes.

    Raises:
        ConfigError: When neither the config nor the game provides an episode length.
    """
    horizon = config.episode_length or game.episode_length
    if horizon is None:
        raise ConfigError("baseline runs need an episode length")
    if episodes < 1 or evaluate_every < 1:
        raise ConfigError("episodes and evaluate_every must be positive")

    started = time.perf_counter()
    n_agents = game.n_agents
    counts = game.action_counts
    strides = [math.prod(counts[i + 1:]) for i in range(n_agents)]
    gamma = game.gamma
    alpha_up, alpha_down = config.alpha_up, config.alpha_down
    rewards = game.reward.tolist()
    next_rows = game.next_state.tolist() if game.is_deterministic else None

    env = rng.spawn(purpose=StreamPurpose.ENVIRONMENT)
    explore = [rng.spawn(agent=i, purpose=StreamPurpose.EXPLORATION).generator for i in range(n_agents)]
    q = [np.zeros((game.n_states, c)).tolist() for c in counts]
    actions = [0] * n_agents
    returns = []

    for episode in range(episodes):
        eps = linear_anneal(episode, episodes, config.epsilon_start, config.epsilon_end)
        state = env.choice(game.n_states, game.rho)
        for _ in range(horizon):
            joint = 0
            for i in range(n_agents):
                if explore[i].random() < eps:
                    a = int(explore[i].integers(counts[i]))
                else:
                    row = q[i][state]
                    a = row.index(max(row))
                actions[i] = a
                joint += a * strides[i]
            reward = rewards[state][joint]
            if next_rows is not None:
                next_state = next_rows[state][joint]
            else:
                next_state = env.choice(game.n_states, game.kernel[state, joint])
            for i in range(n_agents):
                row = q[i][state]
                a = actions[i]
                error = reward + gamma * max(q[i][next_state]) - row[a]
                row[a] += (alpha_up if error >= 0 else alpha_down) * error
            state = next_state
        if (episode + 1) % evaluate_every == 0:
            returns.append(_policy_metrics(game, _greedy_policy(game, q))[0])

    if q_out is not None:
        q_out.extend(np.asarray(table) for table in q)
    policy = _greedy_policy(game, q)
    _, visitation = _policy_metrics(game, policy)
    return RunRecord(
        algorithm=label,
        seed=rng.seed,
        returns=returns,
        final_policy=policy,
        visitation=visitation,
        wall_clock=time.perf_counter() - started,
    )


def decentralized_q_learning_run(game: MultiAgentTabularGame, config: BaselineConfig, episodes: int, rng: RngStream,
                                 *, evaluate_every: int = 1, q_out: Optional[list] = None) -> RunRecord:
    """Independent Q-learning: hysteretic learning with ``alpha_down = alpha_up``."""
    symmetric = config.model_copy(update={'alpha_down': config.alpha_up})
    return hysteretic_q_learning_run(
        game, symmetric, episodes, rng, evaluate_every=evaluate_every, label='decentralized_q', q_out=q_out,
    )
