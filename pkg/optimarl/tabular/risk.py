"""
Entropic risk measure and its KL dual.

Sign convention: everything here works with the soft value
``beta^-1 * log E_pi exp(beta * q)`` directly, i.e. the risk measure applied to
``-q``. Downstream Bellman and gradient formulas consume this quantity as is.

All exponentials are max-shifted through ``scipy.special.logsumexp``, so inputs
with ``|beta * q|`` up to ~700 never overflow an intermediate term.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp, rel_entr

from .defaults import DISTRIBUTION_ATOL, DUALITY_TOL
from .exceptions import (
    DegenerateDistributionError,
    DimensionError,
    NumericInputError,
    PreconditionError,
)

Distribution = NDArray[np.float64]


@dataclass(frozen=True)
class RiskParams:
    """Risk-seeking temperature of the entropic risk measure."""

    beta: float

    def __post_init__(self):
        if not math.isfinite(self.beta) or self.beta <= 0:
            raise PreconditionError(f"beta must be a positive finite number, got {self.beta}")


@dataclass(frozen=True)
class DualityReport:
    max_gap: float
    attained_at_tilt: bool
    tilt_gap: float


def _finite_vector(values: ArrayLike, name: str) -> NDArray[np.float64]:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"{name} must be a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericInputError(f"{name} contains non-finite entries")
    return arr


def as_distribution(weights: ArrayLike, atol: float = DISTRIBUTION_ATOL, name: str = 'distribution') -> Distribution:
    """Validate ``weights`` as a probability vector and return it as a float array."""
    arr = _finite_vector(weights, name)
    if np.any(arr < 0):
        raise PreconditionError(f"{name} has negative weights")
    total = arr.sum()
    if total <= 0:
        raise DegenerateDistributionError(f"{name} has no positive mass")
    if abs(total - 1.0) > atol:
        raise PreconditionError(f"{name} sums to {total!r}, expected 1")
    return arr


def _paired(pi: ArrayLike, q: ArrayLike) -> tuple[Distribution, NDArray[np.float64]]:
    pi_arr = as_distribution(pi, name='pi')
    q_arr = _finite_vector(q, 'q')
    if pi_arr.shape != q_arr.shape:
        raise DimensionError(f"pi has length {pi_arr.size} but q has length {q_arr.size}")
    return pi_arr, q_arr


def soft_values(pi_rows: NDArray[np.float64], q_rows: NDArray[np.float64], beta: float) -> NDArray[np.float64]:
    """
    Row-wise soft value over the last axis. Inputs are assumed validated.

    Rows are centred on their ``pi``-mean first. When ``beta * (q - mean)`` stays
    within [-1, 1] the correction is ``log1p(E expm1(.)) / beta``, which keeps
    full precision as beta -> 0; otherwise it goes through ``logsumexp``.
    """
    support = pi_rows > 0
    pi_rows = pi_rows / pi_rows.sum(axis=-1, keepdims=True)
    q_on = np.where(support, q_rows, 0.0)
    mean = np.sum(pi_rows * q_on, axis=-1)
    centered = np.where(support, beta * (q_on - mean[..., None]), 0.0)
    spread = np.max(np.abs(centered), axis=-1)
    with np.errstate(over='ignore'):
        near = np.log1p(np.sum(pi_rows * np.expm1(centered), axis=-1))
    far = logsumexp(np.where(support, centered, -np.inf), b=pi_rows, axis=-1)
    return mean + np.where(spread <= 1.0, near, far) / beta


def tilted_rows(pi_rows: NDArray[np.float64], q_rows: NDArray[np.float64], beta: float) -> NDArray[np.float64]:
    """Row-wise tilt ``pi * exp(beta * q)``, normalized over the last axis."""
    scaled = np.where(pi_rows > 0, beta * q_rows, -np.inf)
    log_norm = logsumexp(scaled, b=pi_rows, axis=-1, keepdims=True)
    tilt = pi_rows * np.exp(scaled - log_norm)
    return tilt / tilt.sum(axis=-1, keepdims=True)


def soft_value(pi: ArrayLike, q: ArrayLike, params: RiskParams) -> float:
    """
    Entropic soft value ``beta^-1 * log sum_a pi(a) exp(beta * q(a))``.

    Args:
        pi: Baseline distribution over a finite index set.
        q: Payoff per index, same length as ``pi``.
        params: Risk parameters.

    Returns:
        float: The soft value. It lies between ``E_pi q`` and ``max_{pi(a)>0} q(a)``.
    """
    pi_arr, q_arr = _paired(pi, q)
    return float(soft_values(pi_arr, q_arr, params.beta))


def kl_divergence(p_hat: ArrayLike, p: ArrayLike) -> float:
    """``KL(p_hat || p)`` with ``0 log 0 = 0``; ``math.inf`` when p_hat is not absolutely continuous."""
    p_hat_arr = np.asarray(p_hat, dtype=float)
    p_arr = np.asarray(p, dtype=float)
    if p_hat_arr.shape != p_arr.shape or p_arr.ndim != 1:
        raise DimensionError(f"shapes {p_hat_arr.shape} and {p_arr.shape} do not match")
    value = float(np.sum(rel_entr(p_hat_arr, p_arr)))
    return math.inf if math.isinf(value) else value


def tilted_distribution(pi: ArrayLike, q: ArrayLike, params: RiskParams) -> Distribution:
    """Normalized tilt ``pi_hat(a) ∝ pi(a) exp(beta * q(a))``; zero wherever ``pi`` is zero."""
    pi_arr = _finite_vector(pi, 'pi')
    q_arr = _finite_vector(q, 'q')
    if pi_arr.shape != q_arr.shape:
        raise DimensionError(f"pi has length {pi_arr.size} but q has length {q_arr.size}")
    if np.any(pi_arr < 0):
        raise PreconditionError("pi has negative weights")
    if not np.any(pi_arr > 0):
        raise DegenerateDistributionError("cannot tilt a distribution with all weights zero")
    return tilted_rows(pi_arr, q_arr, params.beta)


def penalized_objective(candidate: ArrayLike, pi: ArrayLike, q: ArrayLike, params: RiskParams) -> float:
    """``E_candidate q - KL(candidate || pi) / beta``, ``-inf`` off the support of ``pi``."""
    kl = kl_divergence(candidate, pi)
    if math.isinf(kl):
        return -math.inf
    return float(np.dot(candidate, q)) - kl / params.beta


def duality_check(pi: ArrayLike, q: ArrayLike, params: RiskParams, candidates) -> DualityReport:
    """
    Numerically verify the variational form of the soft value.

    Every candidate must satisfy ``E q - KL/beta <= soft_value`` and the tilted
    distribution must attain the supremum.
    """
    pi_arr, q_arr = _paired(pi, q)
    value = float(soft_values(pi_arr, q_arr, params.beta))

    gaps = []
    for candidate in candidates:
        candidate = as_distribution(candidate, name='candidate')
        if candidate.shape != pi_arr.shape:
            raise DimensionError("candidate length does not match pi")
        gaps.append(penalized_objective(candidate, pi_arr, q_arr, params) - value)
    max_gap = max(gaps, default=-math.inf)

    tilt = tilted_rows(pi_arr, q_arr, params.beta)
    tilt_gap = penalized_objective(tilt, pi_arr, q_arr, params) - value
    attained = abs(tilt_gap) <= DUALITY_TOL and max_gap <= tilt_gap + DUALITY_TOL
    return DualityReport(max_gap=max_gap, attained_at_tilt=attained, tilt_gap=tilt_gap)


def simplex_grid(n_actions: int, resolution: int) -> NDArray[np.float64]:
    """All points of the simplex whose coordinates are multiples of ``1/resolution``."""
    if n_actions < 1 or resolution < 1:
        raise PreconditionError("n_actions and resolution must be positive")
    points = []
    # stars and bars: choose the n_actions - 1 bar positions
    for bars in itertools.combinations(range(resolution + n_actions - 1), n_actions - 1):
        edges = (-1,) + bars + (resolution + n_actions - 1,)
        points.append([edges[k + 1] - edges[k] - 1 for k in range(n_actions)])
    return np.asarray(points, dtype=float) / resolution
