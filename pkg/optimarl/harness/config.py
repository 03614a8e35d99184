"""
Experiment configuration.

A JSON file is validated into ``ExperimentConfig``; command-line flags are
applied on top with ``apply_overrides``. Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from django.conf import settings
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..tabular.defaults import GRAD_CHECK_THRESHOLD, NASH_TOL
from ..tabular.envs import BallBalanceConfig, GridworldConfig
from ..tabular.exceptions import ConfigError
from ..tabular.learners import BaselineConfig, EvalConfig, UpdateConfig

ExperimentKind = Literal[
    'gridworld_exact', 'gridworld_sampled', 'ball_balancing', 'grad_check', 'nash_check', 'duality_check',
]
Algorithm = Literal['optimistic_pg', 'optimistic_greedy', 'decentralized_q', 'hysteretic_q', 'risk_neutral_pg']

OPTIMISTIC_ALGORITHMS = ('optimistic_pg', 'optimistic_greedy')
ALGORITHMS_BY_KIND = {
    'gridworld_exact': {'optimistic_pg', 'optimistic_greedy', 'risk_neutral_pg'},
    'gridworld_sampled': {'optimistic_pg', 'optimistic_greedy', 'decentralized_q', 'hysteretic_q'},
    'ball_balancing': {'optimistic_pg', 'optimistic_greedy', 'decentralized_q', 'hysteretic_q'},
}


class GradCheckConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    n_games: int = Field(default=20, ge=0)
    min_states: int = Field(default=2, ge=1)
    max_states: int = Field(default=5, ge=1)
    action_counts: tuple[int, ...] = (2, 2)
    gamma: float = Field(default=0.9, ge=0.0, lt=1.0)
    directions: int = Field(default=10, ge=1)
    h: float = Field(default=1e-5, gt=0.0)
    threshold: float = Field(default=GRAD_CHECK_THRESHOLD, gt=0.0)
    classical_oracle: bool = False

    @model_validator(mode='after')
    def _state_range(self):
        if self.min_states > self.max_states:
            raise ValueError("min_states must not exceed max_states")
        return self


class NashCheckConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    targets: list[tuple[int, int]] = [(4, 4), (2, 2)]
    tol: float = Field(default=NASH_TOL, gt=0.0)


class DualityCheckConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    n_games: int = Field(default=10, ge=0)
    n_states: int = Field(default=3, ge=1)
    action_counts: tuple[int, ...] = (3,)
    gamma: float = Field(default=0.9, ge=0.0, lt=1.0)
    resolution: int = Field(default=20, ge=1)
    tol: float = Field(default=1e-9, gt=0.0)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    kind: ExperimentKind
    algorithms: list[Algorithm] = ['optimistic_pg']
    betas: list[float] = [1.0]
    seeds: list[int] = [0]
    output_dir: Path = Field(default_factory=lambda: Path(settings.OPTIMARL_OUTPUT_DIR))
    jobs: int = Field(default_factory=lambda: settings.OPTIMARL_JOBS, ge=1)
    initial_policy: Literal['uniform', 'random_interior'] = 'uniform'
    game_file: Optional[Path] = None
    policy_file: Optional[Path] = None

    gridworld: GridworldConfig = GridworldConfig()
    ball: BallBalanceConfig = BallBalanceConfig()
    evaluation: EvalConfig = EvalConfig()
    update: UpdateConfig = UpdateConfig()
    baseline: BaselineConfig = BaselineConfig()
    grad_check: GradCheckConfig = GradCheckConfig()
    nash_check: NashCheckConfig = NashCheckConfig()
    duality_check: DualityCheckConfig = DualityCheckConfig()

    @field_validator('betas')
    @classmethod
    def _positive_betas(cls, values: list[float]) -> list[float]:
        if not values or any(not beta > 0 for beta in values):
            raise ValueError("betas must be a non-empty list of positive numbers")
        return values

    @field_validator('seeds')
    @classmethod
    def _seed_range(cls, values: list[int]) -> list[int]:
        if any(not 0 <= seed < 2 ** 64 for seed in values):
            raise ValueError("seeds must be 64-bit unsigned integers")
        return values

    @model_validator(mode='after')
    def _algorithms_for_kind(self):
        allowed = ALGORITHMS_BY_KIND.get(self.kind)
        if allowed is not None:
            invalid = [name for name in self.algorithms if name not in allowed]
            if invalid or not self.algorithms:
                raise ValueError(f"algorithms {invalid or '[]'} are not valid for {self.kind}; choose from {sorted(allowed)}")
        return self

    def variants(self) -> list[tuple[str, str, Optional[float]]]:
        """``(label, algorithm, beta)`` for every algorithm, expanded over betas where beta matters."""
        expanded = []
        for algorithm in self.algorithms:
            if algorithm in OPTIMISTIC_ALGORITHMS:
                if len(self.betas) == 1:
                    expanded.append((algorithm, algorithm, self.betas[0]))
                else:
                    expanded.extend((f'{algorithm}[beta={beta:g}]', algorithm, beta) for beta in self.betas)
            else:
                expanded.append((algorithm, algorithm, None))
        return expanded


def load_config(path: Optional[Path], kind: Optional[str] = None) -> dict:
    """Raw JSON of a config file (or ``{'kind': kind}`` without one)."""
    if path is None:
        if kind is None:
            raise ConfigError("either a config file or an experiment kind is required")
        return {'kind': kind}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    if kind is not None and data.setdefault('kind', kind) != kind:
        raise ConfigError(f"config kind {data['kind']!r} does not match command kind {kind!r}")
    return data


def apply_overrides(data: dict, *, beta: Optional[float] = None, seeds: Optional[list[int]] = None,
                    output_dir: Optional[str] = None, algorithm: Optional[str] = None,
                    jobs: Optional[int] = None) -> ExperimentConfig:
    """Validate ``data`` with command-line values taking precedence over the file."""
    merged = dict(data)
    if beta is not None:
        merged['betas'] = [beta]
    if seeds:
        merged['seeds'] = list(seeds)
    if output_dir is not None:
        merged['output_dir'] = output_dir
    if algorithm is not None:
        merged['algorithms'] = [algorithm]
    if jobs is not None:
        merged['jobs'] = jobs
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
