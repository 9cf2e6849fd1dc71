"""Lagrangian steepest descent for the extremal-concentration portfolios.

For one disorder sample ``J`` the feasible set W(kappa) is the intersection
of the budget hyperplane with the risk ellipsoid. The iteration

    w <- w - eta_w dL/dw,   k <- k + eta_k dL/dk,   theta <- theta + eta_theta dL/dtheta

finds the minimum of ``q_w`` over W(kappa) with positive step sizes and the
maximum with negative ones.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DivergenceError, DomainError
from .market import WishartMetric, concentration
from .market import budget_residual as _budget_residual
from .replica import ModelPoint

__all__ = [
    "Mode",
    "SolverConfig",
    "SolverState",
    "SolveReport",
    "lagrangian",
    "gradients",
    "solve",
    "TRACE_HEADER",
]

TRACE_HEADER = ("step", "delta", "lagrangian", "q_w", "budget_residual", "risk_residual")
DIVERGENCE_FACTOR = 1e9


class Mode(str, enum.Enum):
    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"

    @property
    def sign(self) -> float:
        return 1.0 if self is Mode.MINIMIZE else -1.0


@dataclass(frozen=True)
class SolverConfig:
    """Step sizes and stopping rule for :func:`solve`.

    ``per_asset_budget`` feeds the budget multiplier the per-asset residual
    ``1 - e.w/N`` instead of ``N - e.w``. The extensive form makes the
    (w, k) iteration unstable as soon as ``|eta_w eta_k| N`` exceeds roughly
    ``|eta_w| (1 + theta alpha)``, so with step sizes of order 0.1 it only
    works for a handful of assets.

    ``budget_penalty`` (rho) adds ``rho (N - e.w)^2 / (2N)`` to the objective,
    with the sign that makes the fixed point attracting in either mode. It
    leaves the fixed points unchanged and is zero by default; very small
    markets (N = 2, where W(kappa) is two points) need it.

    ``theta0`` defaults to +1 for minimize and -1 for maximize: starting
    the ascent at theta = +1 makes every weight direction unstable at once.
    """

    eta_w: float = 1e-1
    eta_k: float = 1e-1
    eta_theta: float = 1e-5
    delta: float = 1e-5
    max_iters: int = 1_000_000
    mode: Mode = Mode.MINIMIZE
    per_asset_budget: bool = True
    budget_penalty: float = 0.0
    theta0: float | None = None
    k0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        etas = (self.eta_w, self.eta_k, self.eta_theta)
        if self.mode is Mode.MINIMIZE and not all(e > 0 for e in etas):
            raise DomainError("minimize mode needs eta_w, eta_k, eta_theta > 0")
        if self.mode is Mode.MAXIMIZE and not all(e < 0 for e in etas):
            raise DomainError("maximize mode needs eta_w, eta_k, eta_theta < 0")
        if not self.delta > 0:
            raise DomainError("delta must be positive")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise DomainError("max_iters must be a positive integer")
        if self.budget_penalty < 0:
            raise DomainError("budget_penalty must be non-negative")

    @classmethod
    def standard(cls, mode: Mode | str = Mode.MINIMIZE, **overrides) -> "SolverConfig":
        """Step sizes 1e-1 / 1e-1 / 1e-5 and delta = 1e-5, signed for ``mode``."""
        mode = Mode(mode)
        s = mode.sign
        base = dict(eta_w=s * 1e-1, eta_k=s * 1e-1, eta_theta=s * 1e-5, delta=1e-5, mode=mode)
        base.update(overrides)
        return cls(**base)

    def for_mode(self, mode: Mode | str) -> "SolverConfig":
        """Same magnitudes with signs (and default theta0) set for ``mode``."""
        mode = Mode(mode)
        s = mode.sign
        return replace(
            self,
            mode=mode,
            eta_w=s * abs(self.eta_w),
            eta_k=s * abs(self.eta_k),
            eta_theta=s * abs(self.eta_theta),
        )

    @property
    def initial_theta(self) -> float:
        if self.theta0 is not None:
            return float(self.theta0)
        return 1.0 if self.mode is Mode.MINIMIZE else -1.0


@dataclass
class SolverState:
    w: np.ndarray
    k: float
    theta: float
    step: int = 0
    last_delta: float = math.inf


@dataclass
class SolveReport:
    final: SolverState
    converged: bool
    q_w: float
    budget_residual: float
    risk_residual: float
    iterations: int


def _target_risk(n: int, point: ModelPoint) -> float:
    return n * point.kappa * point.epsilon


def _check_dims(w: np.ndarray, J: WishartMetric) -> None:
    if w.ndim != 1 or w.shape[0] != J.n_assets:
        raise DomainError(f"portfolio length {w.shape} does not match metric of size {J.n_assets}")


def lagrangian(w, k: float, theta: float, J: WishartMetric, point: ModelPoint) -> float:
    w = np.asarray(w, dtype=float)
    _check_dims(w, J)
    n = w.shape[0]
    return float(
        0.5 * w @ w
        + k * (n - w.sum())
        + theta * (0.5 * w @ (J.matrix @ w) - _target_risk(n, point))
    )


def gradients(state: SolverState, J: WishartMetric, point: ModelPoint):
    """Partial derivatives ``(dL/dw, dL/dk, dL/dtheta)`` at ``state``."""
    w = np.asarray(state.w, dtype=float)
    _check_dims(w, J)
    n = w.shape[0]
    jw = J.matrix @ w
    gw = w - state.k + state.theta * jw
    gk = n - w.sum()
    gtheta = 0.5 * w @ jw - _target_risk(n, point)
    return gw, float(gk), float(gtheta)


def _report(state: SolverState, J: WishartMetric, point: ModelPoint, converged: bool) -> SolveReport:
    n = state.w.shape[0]
    r = 0.5 * float(state.w @ (J.matrix @ state.w))
    return SolveReport(
        final=state,
        converged=converged,
        q_w=concentration(state.w),
        budget_residual=_budget_residual(state.w),
        risk_residual=r / _target_risk(n, point) - 1.0,
        iterations=state.step,
    )


def solve(
    J: WishartMetric,
    point: ModelPoint,
    config: SolverConfig,
    *,
    trace=None,
    trace_every: int = 1,
) -> SolveReport:
    """Run the simultaneous steepest-descent updates from ``w = e``, ``k = 1``.

    Stops when ``Delta = sum|dw_i| + |dk| + |dtheta| < delta`` (Delta of the
    update just applied) or after ``max_iters`` updates; the report says
    which. Raises :class:`DivergenceError` when ``||w||`` exceeds
    ``1e9 sqrt(N)`` or the iterate stops being finite.

    ``trace`` is an optional text stream receiving a CSV row every
    ``trace_every`` steps.
    """
    mat = J.matrix
    n = J.n_assets
    target = _target_risk(n, point)
    ew, ek, et = config.eta_w, config.eta_k, config.eta_theta
    sgn = config.mode.sign
    rho = config.budget_penalty
    k_scale = 1.0 / n if config.per_asset_budget else 1.0
    guard = DIVERGENCE_FACTOR * math.sqrt(n)

    w = np.ones(n)
    k = float(config.k0)
    theta = config.initial_theta
    writer = None
    if trace is not None:
        writer = csv.writer(trace)
        writer.writerow(TRACE_HEADER)

    step = 0
    delta = math.inf
    converged = False
    while step < config.max_iters:
        jw = mat @ w
        wsum = w.sum()
        b = n - wsum
        r = 0.5 * float(w @ jw)
        gw = w - k + theta * jw
        if rho:
            gw -= (sgn * rho * b / n)
        gk = b * k_scale
        gt = r - target

        dw = ew * gw
        w = w - dw
        dk = ek * gk
        dt = et * gt
        k += dk
        theta += dt
        step += 1
        delta = float(np.abs(dw).sum()) + abs(dk) + abs(dt)

        if writer is not None and step % trace_every == 0:
            writer.writerow([step, repr(delta), repr(lagrangian(w, k, theta, J, point)),
                             repr(concentration(w)), repr(_budget_residual(w)),
                             repr(0.5 * float(w @ (mat @ w)) / target - 1.0)])
        if not math.isfinite(delta) or float(np.sqrt(w @ w)) > guard:
            state = SolverState(w, k, theta, step, delta)
            raise DivergenceError(
                f"steepest descent diverged at step {step} ({config.mode.value})",
                residuals=_report(state, J, point, False) if math.isfinite(delta) else None,
            )
        if delta < config.delta:
            converged = True
            break

    return _report(SolverState(w, k, theta, step, delta), J, point, converged)
