"""Analytic side of the model: replica-symmetric bounds, saddle system, duality.

Everything here is intensive (per asset, thermodynamic limit) and depends only
on the scenario ratio ``alpha = p/N`` and the risk coefficient ``kappa``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceError, DomainError

__all__ = [
    "ModelPoint",
    "ReplicaBounds",
    "Branch",
    "DualPoint",
    "Sign",
    "SaddleState",
    "minimal_risk_per_asset",
    "q_bounds",
    "dual_kappa",
    "dual_risk",
    "annealed_concentration",
    "saddle_asymptotics",
    "saddle_residuals",
    "saddle_solve",
]


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not math.isfinite(alpha) or alpha <= 1.0:
        raise DomainError(f"alpha must satisfy alpha > 1, got {alpha}")
    return alpha


def _check_kappa(kappa: float) -> float:
    kappa = float(kappa)
    if not math.isfinite(kappa) or kappa < 1.0:
        raise DomainError(f"kappa must satisfy kappa >= 1, got {kappa}")
    return kappa


@dataclass(frozen=True)
class ModelPoint:
    alpha: float
    kappa: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", _check_alpha(self.alpha))
        object.__setattr__(self, "kappa", _check_kappa(self.kappa))

    @property
    def epsilon(self) -> float:
        return minimal_risk_per_asset(self.alpha)


@dataclass(frozen=True)
class ReplicaBounds:
    q_max: float
    q_min: float
    point: ModelPoint


class Branch(str, enum.Enum):
    """Which side of the duality a target concentration belongs to.

    ``MAX``: maximal concentration in W(kappa) <-> minimal risk in R(tau).
    ``MIN``: minimal concentration in W(kappa) <-> maximal risk in R(tau).
    """

    MAX = "max"
    MIN = "min"


@dataclass(frozen=True)
class DualPoint:
    tau: float
    branch: Branch = Branch.MAX

    def __post_init__(self):
        tau = float(self.tau)
        if not math.isfinite(tau) or tau < 1.0:
            raise DomainError(f"tau must satisfy tau >= 1, got {tau}")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "branch", Branch(self.branch))


class Sign(str, enum.Enum):
    PLUS = "plus"  # beta -> +inf, maximal concentration
    MINUS = "minus"  # beta -> -inf, minimal concentration

    @property
    def value_sign(self) -> float:
        return 1.0 if self is Sign.PLUS else -1.0


def minimal_risk_per_asset(alpha: float) -> float:
    """Minimal risk per asset under the budget constraint alone, ``(alpha-1)/2``."""
    return (_check_alpha(alpha) - 1.0) / 2.0


def _expanded_square(alpha: float, kappa: float, sign: float) -> float:
    # (sqrt(a k) +- sqrt(k-1))^2 without forming the square roots separately
    return alpha * kappa + kappa - 1.0 + sign * 2.0 * math.sqrt(alpha * kappa * (kappa - 1.0))


def q_bounds(point: ModelPoint) -> ReplicaBounds:
    """Typical maximal and minimal investment concentration on W(kappa)."""
    a, k = point.alpha, point.kappa
    q_max = _expanded_square(a, k, +1.0) / (a - 1.0)
    q_min = _expanded_square(a, k, -1.0) / (a - 1.0)
    return ReplicaBounds(q_max=q_max, q_min=q_min, point=point)


def dual_kappa(alpha: float, dual: DualPoint) -> float:
    """Risk coefficient whose bound on the given branch equals ``dual.tau``.

    The max branch inverts ``q_max`` for every kappa >= 1. The min branch
    inverts ``q_min`` only for kappa >= alpha/(alpha-1): below that point
    ``q_min`` decreases in kappa and is recovered by the max-branch formula.
    """
    a = _check_alpha(alpha)
    t = dual.tau
    root = 2.0 * math.sqrt(a * t * (t - 1.0))
    sign = -1.0 if dual.branch is Branch.MAX else 1.0
    return ((a + 1.0) * t - 1.0 + sign * root) / (a - 1.0)


def dual_risk(alpha: float, dual: DualPoint) -> float:
    """Minimal (max branch) or maximal (min branch) risk per asset on R(tau)."""
    a = _check_alpha(alpha)
    t = dual.tau
    root = 2.0 * math.sqrt(a * t * (t - 1.0))
    sign = -1.0 if dual.branch is Branch.MAX else 1.0
    return (a * t + t - 1.0 + sign * root) / 2.0


def annealed_concentration(kappa: float) -> float:
    """In the annealed system both bounds collapse onto ``q_w = kappa``."""
    return _check_kappa(kappa)


def saddle_asymptotics(point: ModelPoint, sign: Sign) -> tuple[float, float, float]:
    """Leading large-|beta| behaviour of the saddle point.

    Returns ``(theta * chi_w, beta / theta, q_w)``. ``beta / theta`` is
    infinite where its denominator vanishes (on the minus branch that happens
    at kappa = alpha/(alpha-1), where theta passes through zero).
    """
    sign = Sign(sign)
    a, k = point.alpha, point.kappa
    s = math.sqrt(a - a / k)
    pm = sign.value_sign
    theta_chi = (1.0 + pm * s) / (a - 1.0)
    denom = 2.0 * a - a / k + pm * (a + 1.0) * s
    numer = pm * (a - 1.0) ** 2 * s
    if denom == 0.0:
        beta_over_theta = math.copysign(math.inf, numer) if numer else math.nan
    else:
        beta_over_theta = numer / denom
    q_w = _expanded_square(a, k, pm) / (a - 1.0)
    return theta_chi, beta_over_theta, q_w


@dataclass(frozen=True)
class SaddleState:
    k: float
    theta: float
    chi_w: float
    q_w: float
    chi_w_tilde: float
    q_w_tilde: float
    beta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.k, self.theta, self.chi_w, self.q_w, self.chi_w_tilde, self.q_w_tilde])

    @classmethod
    def from_array(cls, x, beta: float) -> "SaddleState":
        return cls(*(float(v) for v in x), beta=float(beta))

    @property
    def total_concentration(self) -> float:
        """``chi_w + q_w``, i.e. twice the beta-derivative of the free energy."""
        return self.chi_w + self.q_w


def _equation_sides(x, point: ModelPoint, beta: float):
    k, th, chi, q, chit, qt = x
    a, kap = point.alpha, point.kappa
    d = 1.0 + th * chi
    return (
        (k, chit),
        (chi, 1.0 / chit),
        (q, 1.0 + qt / chit**2),
        (chit + beta, a * th / d),
        (qt, a * th**2 * q / d**2),
        (kap * (a - 1.0) / 2.0, a * chi / (2.0 * d) + a * q / (2.0 * d**2)),
    )


def saddle_residuals(state: SaddleState, point: ModelPoint) -> np.ndarray:
    """Relative residual ``|lhs - rhs| / max(|lhs|, |rhs|)`` of each extremum condition."""
    out = np.empty(6)
    for i, (lhs, rhs) in enumerate(_equation_sides(state.as_array(), point, state.beta)):
        scale = max(abs(lhs), abs(rhs))
        out[i] = abs(lhs - rhs) / scale if scale > 0 else 0.0
    return out


def _cleared(x, a, kap, beta):
    """Extremum conditions with denominators cleared, and their Jacobian."""
    k, th, chi, q, chit, qt = x
    d = 1.0 + th * chi
    c = kap * (a - 1.0)
    f = np.array([
        k - chit,
        chi * chit - 1.0,
        (q - 1.0) * chit**2 - qt,
        (chit + beta) * d - a * th,
        qt * d**2 - a * th**2 * q,
        c * d**2 - a * chi * d - a * q,
    ])
    jac = np.zeros((6, 6))
    # columns: k, theta, chi, q, chit, qt
    jac[0, 0], jac[0, 4] = 1.0, -1.0
    jac[1, 2], jac[1, 4] = chit, chi
    jac[2, 3], jac[2, 4], jac[2, 5] = chit**2, 2.0 * (q - 1.0) * chit, -1.0
    jac[3, 1] = (chit + beta) * chi - a
    jac[3, 2] = (chit + beta) * th
    jac[3, 4] = d
    jac[4, 1] = 2.0 * qt * d * chi - 2.0 * a * th * q
    jac[4, 2] = 2.0 * qt * d * th
    jac[4, 3] = -a * th**2
    jac[4, 5] = d**2
    jac[5, 1] = 2.0 * c * d * chi - a * chi**2
    jac[5, 2] = 2.0 * c * d * th - a * (d + chi * th)
    jac[5, 3] = -a
    return f, jac


def _state_from_u(u: float, point: ModelPoint, beta: float) -> np.ndarray:
    a = point.alpha
    chi = (a * u / (1.0 + u) - 1.0) / beta
    th = u / chi
    q = (1.0 + u) ** 2 / ((1.0 + u) ** 2 - a * u**2)
    chit = 1.0 / chi
    return np.array([chit, th, chi, q, chit, (q - 1.0) * chit**2])


def _reduced_init(point: ModelPoint, beta: float) -> np.ndarray:
    """Exact finite-beta start obtained by eliminating all but ``u = theta*chi``.

    Used where the asymptotic start is degenerate (theta -> 0).
    """
    a, kap = point.alpha, point.kappa

    def g(u):
        chi = (a * u / (1.0 + u) - 1.0) / beta
        q = (1.0 + u) ** 2 / ((1.0 + u) ** 2 - a * u**2)
        return a * chi / (1.0 + u) + a * q / (1.0 + u) ** 2 - kap * (a - 1.0)

    u_mid = 1.0 / (a - 1.0)
    if beta > 0:
        lo, hi = u_mid, 1.0 / (math.sqrt(a) - 1.0)
    else:
        lo, hi = -1.0 / (math.sqrt(a) + 1.0), u_mid
    width = hi - lo
    lo_t, hi_t = lo + 1e-14 * width, hi - 1e-14 * width
    if not g(lo_t) * g(hi_t) < 0:
        raise ConvergenceError("no sign change for the reduced saddle equation")
    u = brentq(g, lo_t, hi_t, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return _state_from_u(u, point, beta)


def _asymptotic_init(point: ModelPoint, beta: float):
    sign = Sign.PLUS if beta > 0 else Sign.MINUS
    u, bt, q = saddle_asymptotics(point, sign)
    if not math.isfinite(bt) or bt == 0.0 or abs(u) < 1e-8:
        return None
    th = beta / bt
    chi = u / th
    chit = 1.0 / chi
    return np.array([chit, th, chi, q, chit, (q - 1.0) * chit**2])


def _newton(x, point: ModelPoint, beta: float, tol: float, max_iter: int):
    a, kap = point.alpha, point.kappa

    def merit(y):
        if not np.all(np.isfinite(y)) or y[4] == 0.0 or 1.0 + y[1] * y[2] == 0.0:
            return math.inf
        return float(saddle_residuals(SaddleState.from_array(y, beta), point).max())

    m = merit(x)
    for _ in range(max_iter):
        if m < tol:
            break
        f, jac = _cleared(x, a, kap, beta)
        col = np.where(x != 0.0, np.abs(x), 1.0)
        scaled = jac * col
        row = np.abs(scaled).max(axis=1)
        row[row == 0.0] = 1.0
        try:
            dy = np.linalg.solve(scaled / row[:, None], -f / row)
        except np.linalg.LinAlgError:
            break
        step = dy * col
        lam = 1.0
        while lam > 1e-12:
            trial = x + lam * step
            mt = merit(trial)
            if mt < m:
                break
            lam *= 0.5
        else:
            break  # no decrease along the Newton direction
        x, m = trial, mt
    return x, m


def saddle_solve(
    point: ModelPoint,
    beta: float,
    init: SaddleState | None = None,
    *,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> SaddleState:
    """Solve the six replica-symmetric extremum conditions at finite ``beta``.

    Damped Newton (step halving until the largest relative residual drops)
    on the cleared equations, started from the large-|beta| asymptotics
    unless ``init`` is given. Raises :class:`ConvergenceError` if the largest
    relative residual is still above ``tol`` when the iteration stops.
    """
    beta = float(beta)
    if beta == 0.0 or not math.isfinite(beta):
        raise DomainError(f"beta must be finite and nonzero, got {beta}")
    if point.kappa == 1.0:
        raise DomainError("kappa = 1 makes W(kappa) a single point; chi_w -> 0 has no finite saddle")

    starts = []
    if init is not None:
        starts.append(init.as_array())
    else:
        x0 = _asymptotic_init(point, beta)
        if x0 is not None:
            starts.append(x0)
    starts.append(None)  # reduced start, computed lazily

    best = None
    for x0 in starts:
        if x0 is None:
            x0 = _reduced_init(point, beta)
        # aim a little below tol so the returned state clears it with room
        x, m = _newton(x0, point, beta, tol * 1e-2, max_iter)
        if best is None or m < best[1]:
            best = (x, m)
        if m < tol:
            return SaddleState.from_array(x, beta)
    x, m = best
    state = SaddleState.from_array(x, beta)
    raise ConvergenceError(
        f"saddle solve did not converge at beta={beta}: max residual {m:.3e}",
        residuals=saddle_residuals(state, point) if math.isfinite(m) else None,
    )


# keep dataclass field order discoverable for CLI printers
SADDLE_FIELDS = tuple(f.name for f in fields(SaddleState))
