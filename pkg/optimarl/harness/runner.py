"""
Seeded experiment execution.

Every (variant, seed) pair is an independent job with its own random streams,
so jobs can run in a process pool; results are always joined back in the
configured (variant, seed) order.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from multiprocessing import get_context
from typing import Optional

import numpy as np
import pandas as pd

from ..tabular.envs import build_ball_balancing, build_game, build_gridworld, grid_heatmap
from ..tabular.exceptions import ConfigError, OptimarlError
from ..tabular.learners import (
    RunRecord,
    decentralized_q_learning_run,
    exact_policy_update_run,
    hysteretic_q_learning_run,
    optimistic_policy_update_run,
    risk_neutral_pg_run,
)
from ..tabular.mdp import FactoredPolicy, MultiAgentTabularGame, RngStream, StreamPurpose
from .config import ExperimentConfig

logger = logging.getLogger(__name__)


@dataclass
class SeedFailure:
    variant: str
    seed: int
    error: str
    slot: int = 0


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[RunRecord] = field(default_factory=list)
    failures: list[SeedFailure] = field(default_factory=list)
    # position in config.seeds of each record, so repeated seeds stay distinguishable
    slots: list[int] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return bool(self.failures)


def build_environment(config: ExperimentConfig) -> MultiAgentTabularGame:
    """The game an experiment runs on: an explicit game file, else the one its kind implies."""
    if config.game_file is not None:
        return build_game(json.loads(config.game_file.read_text()))
    if config.kind in ('gridworld_exact', 'gridworld_sampled', 'nash_check'):
        return build_gridworld(config.gridworld)
    if config.kind == 'ball_balancing':
        return build_ball_balancing(config.ball)
    raise ConfigError(f"experiment kind {config.kind!r} has no environment")


def initial_policy(config: ExperimentConfig, game: MultiAgentTabularGame, seed: int) -> FactoredPolicy:
    if config.policy_file is not None:
        return FactoredPolicy.from_dict(json.loads(config.policy_file.read_text()))
    if config.initial_policy == 'random_interior':
        generator = RngStream(seed, purpose=StreamPurpose.POLICY_INIT).generator
        return FactoredPolicy.random_interior(game.action_counts, game.n_states, generator)
    return FactoredPolicy.uniform(game.action_counts, game.n_states)


def run_variant(config: ExperimentConfig, game: MultiAgentTabularGame, algorithm: str, beta: Optional[float],
                seed: int) -> RunRecord:
    """One seeded run of one algorithm."""
    policy = initial_policy(config, game, seed)
    if config.kind == 'gridworld_exact':
        if algorithm == 'risk_neutral_pg':
            return risk_neutral_pg_run(game, policy, config.update, seed=seed)
        mode = 'gradient' if algorithm == 'optimistic_pg' else 'greedy'
        update = config.update.model_copy(update={'mode': mode})
        return exact_policy_update_run(game, policy, update, beta, seed=seed, label=algorithm)

    rng = RngStream(seed)
    if algorithm in ('optimistic_pg', 'optimistic_greedy'):
        mode = 'gradient' if algorithm == 'optimistic_pg' else 'greedy'
        update = config.update.model_copy(update={'mode': mode})
        return optimistic_policy_update_run(game, policy, config.evaluation, update, rng, beta, label=algorithm)

    # baselines get the same number of environment steps as the optimistic learners
    horizon = config.baseline.episode_length or game.episode_length
    if horizon is None:
        raise ConfigError("baseline runs need baseline.episode_length for this game")
    per_iteration = max(1, config.evaluation.t_q // horizon)
    episodes = config.update.iterations * per_iteration
    if algorithm == 'hysteretic_q':
        return hysteretic_q_learning_run(game, config.baseline, episodes, rng, evaluate_every=per_iteration)
    return decentralized_q_learning_run(game, config.baseline, episodes, rng, evaluate_every=per_iteration)


def _run_job(payload: tuple[dict, str, str, Optional[float], int]) -> tuple[Optional[dict], Optional[str], float]:
    """Pool entry point; returns ``(record dict, error, wall clock)``."""
    config_data, label, algorithm, beta, seed = payload
    config = ExperimentConfig.model_validate(config_data)
    started = time.perf_counter()
    try:
        game = build_environment(config)
        record = run_variant(config, game, algorithm, beta, seed)
    except (OptimarlError, ArithmeticError, ValueError) as exc:
        return None, f'{type(exc).__name__}: {exc}', time.perf_counter() - started
    record.algorithm = label
    record.config = config_echo(config)
    return record.to_dict(), None, time.perf_counter() - started


def config_echo(config: ExperimentConfig) -> dict:
    """Config as recorded in outputs; the output location is left out so moved runs stay identical."""
    return config.model_dump(mode='json', exclude={'output_dir', 'jobs'})


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """
    Execute every (variant, seed) pair of a learning experiment.

    Failures are recorded per seed and do not stop the remaining runs.
    """
    if config.kind not in ('gridworld_exact', 'gridworld_sampled', 'ball_balancing'):
        raise ConfigError(f"{config.kind} is a check, not a learning experiment")

    data = config.model_dump(mode='json')
    slots = [(label, algorithm, beta, slot, seed)
             for label, algorithm, beta in config.variants()
             for slot, seed in enumerate(config.seeds)]
    jobs = [(data, label, algorithm, beta, seed) for label, algorithm, beta, _, seed in slots]
    logger.info("running %d jobs (%d variants x %d seeds) with %d workers",
                len(jobs), len(config.variants()), len(config.seeds), config.jobs)

    if config.jobs > 1 and len(jobs) > 1:
        with get_context('spawn').Pool(processes=min(config.jobs, len(jobs))) as pool:
            outcomes = pool.map(_run_job, jobs)
    else:
        outcomes = [_run_job(job) for job in jobs]

    result = ExperimentResult(config=config)
    for (label, _, _, slot, seed), (record_data, error, wall_clock) in zip(slots, outcomes):
        if error is not None:
            logger.error("%s seed %d failed after %.2fs: %s", label, seed, wall_clock, error)
            result.failures.append(SeedFailure(label, seed, error, slot))
            continue
        record = record_from_dict(record_data)
        record.wall_clock = wall_clock
        logger.info("%s seed %d finished in %.2fs, final return %.6g", label, seed, wall_clock, record.final_return)
        result.records.append(record)
        result.slots.append(slot)
    return result


def record_from_dict(data: dict) -> RunRecord:
    return RunRecord(
        algorithm=data['algorithm'],
        seed=data['seed'],
        returns=list(data['returns']),
        final_policy=FactoredPolicy.from_dict(data['final_policy']),
        visitation=np.asarray(data['visitation'], dtype=float),
        beta=data.get('beta'),
        config=data.get('config', {}),
    )


def summarize(records: list[RunRecord]) -> pd.DataFrame:
    """Mean and population std of the final return per variant, in first-seen variant order."""
    rows = []
    order = list(dict.fromkeys(record.algorithm for record in records))
    for label in order:
        finals = np.asarray([r.final_return for r in records if r.algorithm == label], dtype=float)
        beta = next(r.beta for r in records if r.algorithm == label)
        rows.append({
            'variant': label,
            'beta': math.nan if beta is None else beta,
            'n_seeds': finals.size,
            'mean': float(finals.mean()),
            'std': float(finals.std(ddof=0)),
        })
    return pd.DataFrame(rows, columns=['variant', 'beta', 'n_seeds', 'mean', 'std'])


def learning_curves(records: list[RunRecord]) -> pd.DataFrame:
    """Long-format curves: one row per (variant, iteration) with the mean and std over seeds."""
    rows = []
    for label in dict.fromkeys(record.algorithm for record in records):
        curves = [r.returns for r in records if r.algorithm == label]
        length = min(len(c) for c in curves)
        stacked = np.asarray([c[:length] for c in curves], dtype=float)
        for iteration in range(length):
            rows.append({
                'iteration': iteration + 1,
                'variant': label,
                'mean': float(stacked[:, iteration].mean()),
                'std': float(stacked[:, iteration].std(ddof=0)),
            })
    return pd.DataFrame(rows, columns=['iteration', 'variant', 'mean', 'std'])


def visitation_heatmap(records: list[RunRecord], size: int) -> pd.DataFrame:
    """Seed-averaged final visitation per variant and 1-indexed grid cell."""
    rows = []
    for label in dict.fromkeys(record.algorithm for record in records):
        mass = grid_heatmap(np.mean([r.visitation for r in records if r.algorithm == label], axis=0), size)
        for x in range(size):
            for y in range(size):
                rows.append({'variant': label, 'x': x + 1, 'y': y + 1, 'mass': float(mass[x, y])})
    return pd.DataFrame(rows, columns=['variant', 'x', 'y', 'mass'])
