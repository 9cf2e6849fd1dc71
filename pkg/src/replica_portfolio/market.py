"""Random markets, the Wishart metric and the portfolio functionals.

Return matrices are stored pre-scaled, ``X = {x_imu / sqrt(N)}``, so the risk
metric is simply ``J = X X^T``.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError

__all__ = [
    "Distribution",
    "MarketParams",
    "MarketSample",
    "WishartMetric",
    "derive_seed",
    "generate_market",
    "wishart",
    "risk",
    "risk_from_scenarios",
    "concentration",
    "budget_residual",
    "save_market_csv",
    "load_market_csv",
]

_SQRT3 = np.sqrt(3.0)


class Distribution(str, enum.Enum):
    GAUSSIAN = "standard-gaussian"
    RADEMACHER = "rademacher"
    UNIFORM = "uniform-unit-variance"


@dataclass(frozen=True)
class MarketParams:
    n_assets: int
    n_scenarios: int
    distribution: Distribution = Distribution.GAUSSIAN
    seed: int = 0

    def __post_init__(self):
        if int(self.n_assets) != self.n_assets or self.n_assets < 2:
            raise DomainError(f"n_assets must be an integer >= 2, got {self.n_assets}")
        if int(self.n_scenarios) != self.n_scenarios or self.n_scenarios < 1:
            raise DomainError(f"n_scenarios must be an integer >= 1, got {self.n_scenarios}")
        if not 0 <= self.seed < 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        object.__setattr__(self, "distribution", Distribution(self.distribution))

    @property
    def alpha(self) -> float:
        """Scenario ratio p/N."""
        return self.n_scenarios / self.n_assets


@dataclass(frozen=True, eq=False)
class MarketSample:
    params: MarketParams
    entries: np.ndarray  # (N, p), already divided by sqrt(N)

    def __post_init__(self):
        self.entries.setflags(write=False)

    @property
    def raw(self) -> np.ndarray:
        """Unscaled modified returns x_imu."""
        return self.entries * np.sqrt(self.params.n_assets)


@dataclass(frozen=True, eq=False)
class WishartMetric:
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @property
    def n_assets(self) -> int:
        return self.matrix.shape[0]


def derive_seed(base_seed: int, index: int) -> int:
    """Counter-based child seed for trial ``index`` of a campaign seeded by ``base_seed``.

    The child depends only on the pair, so trials can be generated in any
    order or in parallel.
    """
    ss = np.random.SeedSequence([int(base_seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generate_market(params: MarketParams) -> MarketSample:
    """Draw an i.i.d. zero-mean, unit-variance return matrix for ``params``."""
    rng = np.random.default_rng(params.seed)
    shape = (params.n_assets, params.n_scenarios)
    if params.distribution is Distribution.GAUSSIAN:
        x = rng.standard_normal(shape)
    elif params.distribution is Distribution.RADEMACHER:
        x = rng.integers(0, 2, size=shape).astype(float) * 2.0 - 1.0
    else:
        x = rng.uniform(-_SQRT3, _SQRT3, size=shape)
    return MarketSample(params, x / np.sqrt(params.n_assets))


def wishart(sample) -> WishartMetric:
    """``J = X X^T`` from a sample (or a bare pre-scaled N x p array)."""
    x = np.asarray(getattr(sample, "entries", sample), dtype=float)
    j = x @ x.T
    # matmul is not guaranteed bit-symmetric
    j = np.triu(j) + np.triu(j, 1).T
    return WishartMetric(j)


def _as_weights(w, n=None) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise DomainError("portfolio must be a 1-d vector")
    if n is not None and w.shape[0] != n:
        raise DomainError(f"portfolio has length {w.shape[0]}, expected {n}")
    return w


def risk(w, metric: WishartMetric) -> float:
    """Half the squared Mahalanobis norm, ``w^T J w / 2``."""
    w = _as_weights(w, metric.n_assets)
    return 0.5 * float(w @ (metric.matrix @ w))


def risk_from_scenarios(w, sample: MarketSample) -> float:
    """The same risk summed scenario by scenario from the return matrix."""
    w = _as_weights(w, sample.params.n_assets)
    projections = w @ sample.entries
    return 0.5 * float(projections @ projections)


def concentration(w) -> float:
    """Investment concentration ``q_w = sum(w_i^2) / N``."""
    w = _as_weights(w)
    return float(w @ w) / w.shape[0]


def budget_residual(w) -> float:
    """``sum(w) / N - 1``; zero exactly when the budget constraint holds."""
    w = _as_weights(w)
    return float(w.sum()) / w.shape[0] - 1.0


def save_market_csv(sample: MarketSample, path) -> None:
    """Write raw returns, one row per asset, 17 significant digits."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in sample.raw:
            writer.writerow([format(v, ".17g") for v in row])


def load_market_csv(path, params: MarketParams) -> MarketSample:
    raw = np.loadtxt(Path(path), delimiter=",", ndmin=2)
    if raw.shape != (params.n_assets, params.n_scenarios):
        raise DomainError(f"CSV shape {raw.shape} does not match params")
    return MarketSample(params, raw / np.sqrt(params.n_assets))
