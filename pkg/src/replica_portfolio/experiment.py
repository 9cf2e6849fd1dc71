"""Disorder-averaged campaigns comparing steepest descent with the replica bounds."""
from __future__ import annotations

import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import CampaignError, ConvergenceError, DomainError
from .market import Distribution, MarketParams, derive_seed, generate_market, wishart
from .optimizer import Mode, SolverConfig, solve
from .replica import ModelPoint, q_bounds

logger = logging.getLogger(__name__)

__all__ = [
    "CampaignSpec",
    "TrialResult",
    "KappaRecord",
    "ExperimentSummary",
    "Deviation",
    "run_trial",
    "run_trials",
    "run_campaign",
    "compare",
    "RESULTS_HEADER",
    "TRIALS_HEADER",
    "write_results_csv",
    "write_trials_csv",
    "write_plot_csv",
    "results_csv_text",
    "trials_csv_text",
    "spec_to_config",
    "spec_from_config",
    "load_spec",
]

RESULTS_HEADER = (
    "kappa", "q_max_mean", "q_max_stderr", "q_min_mean", "q_min_stderr",
    "n_max", "n_min", "replica_q_max", "replica_q_min",
)
TRIALS_HEADER = (
    "kappa", "trial", "seed",
    "q_max", "converged_max", "iterations_max", "budget_residual_max", "risk_residual_max",
    "q_min", "converged_min", "iterations_min", "budget_residual_min", "risk_residual_min",
)


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


@dataclass(frozen=True)
class CampaignSpec:
    market: MarketParams
    kappas: tuple[float, ...]
    n_trials: int = 10
    solver: SolverConfig = field(default_factory=SolverConfig.standard)
    base_seed: int = 0

    def __post_init__(self):
        kappas = tuple(float(k) for k in self.kappas)
        if not kappas:
            raise DomainError("kappas must be nonempty")
        if any(not math.isfinite(k) or k < 1.0 for k in kappas):
            raise DomainError("every kappa must be >= 1")
        if int(self.n_trials) != self.n_trials or self.n_trials < 1:
            raise DomainError("n_trials must be a positive integer")
        if not 0 <= self.base_seed < 2**64:
            raise DomainError("base_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "kappas", kappas)

    @property
    def alpha(self) -> float:
        return self.market.alpha


@dataclass(frozen=True)
class TrialResult:
    kappa: float
    trial: int
    seed: int
    q_max: float
    converged_max: bool
    iterations_max: int
    budget_residual_max: float
    risk_residual_max: float
    q_min: float
    converged_min: bool
    iterations_min: int
    budget_residual_min: float
    risk_residual_min: float


@dataclass(frozen=True)
class KappaRecord:
    kappa: float
    q_max_mean: float
    q_max_stderr: float
    q_min_mean: float
    q_min_stderr: float
    n_converged_max: int
    n_converged_min: int
    replica_q_max: float
    replica_q_min: float


@dataclass
class ExperimentSummary:
    spec: CampaignSpec
    records: list[KappaRecord]
    trials: list[TrialResult]
    warnings: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class Deviation:
    kappa: float
    rel_dev_max: float
    z_max: float
    rel_dev_min: float
    z_min: float


def _single(J, point, config):
    """(q, converged, iterations, budget residual, risk residual) for one mode."""
    try:
        rep = solve(J, point, config)
    except ConvergenceError as exc:
        rep = exc.residuals
        if rep is None:
            return math.nan, False, config.max_iters, math.nan, math.nan
        return rep.q_w, False, rep.iterations, rep.budget_residual, rep.risk_residual
    return rep.q_w, rep.converged, rep.iterations, rep.budget_residual, rep.risk_residual


def run_trial(spec: CampaignSpec, kappa: float, trial: int) -> TrialResult:
    """Both solver modes on the sample of trial ``trial`` at risk coefficient ``kappa``.

    The sample depends only on ``(base_seed, trial)``, so all kappas of one
    trial share a return matrix and both modes see the same one.
    """
    seed = derive_seed(spec.base_seed, trial)
    sample = generate_market(replace(spec.market, seed=seed))
    J = wishart(sample)
    point = ModelPoint(spec.alpha, kappa)
    hi = _single(J, point, spec.solver.for_mode(Mode.MAXIMIZE))
    lo = _single(J, point, spec.solver.for_mode(Mode.MINIMIZE))
    return TrialResult(kappa, trial, seed, *hi, *lo)


def _run_task(args):
    spec, kappa, trial = args
    return run_trial(spec, kappa, trial)


def run_trials(spec: CampaignSpec, pairs, jobs: int | None = 1) -> list[TrialResult]:
    """:func:`run_trial` over ``(kappa, trial)`` pairs, results in input order."""
    tasks = [(spec, float(kappa), int(m)) for kappa, m in pairs]
    if jobs is None:
        jobs = os.cpu_count() or 1
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_task, tasks, chunksize=1))
    return [_run_task(t) for t in tasks]


def _mean_stderr(values: np.ndarray) -> tuple[float, float]:
    if values.size == 0:
        return math.nan, math.nan
    mean = float(np.mean(values))
    if values.size == 1:
        return mean, 0.0
    return mean, float(np.std(values, ddof=1) / math.sqrt(values.size))


def _aggregate(spec: CampaignSpec, trials: list[TrialResult]):
    records, warnings = [], []
    for kappa in spec.kappas:
        rows = [t for t in trials if t.kappa == kappa]
        his = np.array([t.q_max for t in rows if t.converged_max])
        los = np.array([t.q_min for t in rows if t.converged_min])
        for label, vals in (("maximize", his), ("minimize", los)):
            if vals.size == 0:
                raise CampaignError(f"no {label} trial converged at kappa={kappa:g}")
            if vals.size < len(rows):
                warnings.append(
                    f"kappa={kappa:g}: {len(rows) - vals.size} of {len(rows)} {label} trials did not converge"
                )
        bounds = q_bounds(ModelPoint(spec.alpha, kappa))
        records.append(KappaRecord(
            kappa, *_mean_stderr(his), *_mean_stderr(los), int(his.size), int(los.size),
            bounds.q_max, bounds.q_min,
        ))
    return records, warnings


def run_campaign(spec: CampaignSpec, jobs: int | None = 1, progress=None) -> ExperimentSummary:
    """Run every (kappa, trial) pair and average the converged results per kappa.

    ``jobs`` > 1 distributes pairs over worker processes (``None`` uses all
    processors). Results are collected in grid order, so the summary does not
    depend on ``jobs``. ``progress`` is called with each finished
    :class:`KappaRecord`.
    """
    if spec.alpha <= 1.0:
        raise DomainError(f"campaign needs alpha = p/N > 1, got {spec.alpha}")
    pairs = [(kappa, m) for kappa in spec.kappas for m in range(spec.n_trials)]
    trials = run_trials(spec, pairs, jobs)
    records, warnings = _aggregate(spec, trials)
    for w in warnings:
        logger.warning(w)
    if progress is not None:
        for rec in records:
            progress(rec)
    return ExperimentSummary(spec, records, trials, warnings)


def compare(summary: ExperimentSummary) -> list[Deviation]:
    """Relative deviation and z-score of each simulated mean from its replica value."""
    out = []
    for r in summary.records:
        dmax = r.q_max_mean - r.replica_q_max
        dmin = r.q_min_mean - r.replica_q_min
        out.append(Deviation(
            r.kappa,
            dmax / r.replica_q_max,
            dmax / r.q_max_stderr if r.q_max_stderr > 0 else math.nan,
            dmin / r.replica_q_min,
            dmin / r.q_min_stderr if r.q_min_stderr > 0 else math.nan,
        ))
    return out


# -- CSV ---------------------------------------------------------------------

def _write_rows(fh, header, rows):
    fh.write(",".join(header) + "\n")
    for row in rows:
        fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_results_csv(summary: ExperimentSummary, fh) -> None:
    _write_rows(fh, RESULTS_HEADER, (
        (r.kappa, r.q_max_mean, r.q_max_stderr, r.q_min_mean, r.q_min_stderr,
         r.n_converged_max, r.n_converged_min, r.replica_q_max, r.replica_q_min)
        for r in summary.records
    ))


def write_trials_csv(summary: ExperimentSummary, fh) -> None:
    _write_rows(fh, TRIALS_HEADER, (
        tuple(getattr(t, f.name) for f in fields(TrialResult)) for t in summary.trials
    ))


def results_csv_text(summary: ExperimentSummary) -> str:
    buf = io.StringIO()
    write_results_csv(summary, buf)
    return buf.getvalue()


def trials_csv_text(summary: ExperimentSummary) -> str:
    buf = io.StringIO()
    write_trials_csv(summary, buf)
    return buf.getvalue()


def write_plot_csv(alpha: float, kappas, fh) -> None:
    """Replica curves only, for drawing the bound-versus-kappa figures."""
    rows = []
    for kappa in kappas:
        b = q_bounds(ModelPoint(alpha, kappa))
        rows.append((kappa, b.q_max, b.q_min))
    _write_rows(fh, ("kappa", "replica_q_max", "replica_q_min"), rows)


# -- key=value config ----------------------------------------------------------

def spec_to_config(spec: CampaignSpec) -> str:
    s = spec.solver
    items = [
        ("n_assets", spec.market.n_assets),
        ("n_scenarios", spec.market.n_scenarios),
        ("distribution", spec.market.distribution.value),
        ("kappas", ",".join(_fmt(k) for k in spec.kappas)),
        ("n_trials", spec.n_trials),
        ("base_seed", spec.base_seed),
        ("eta_w", _fmt(abs(s.eta_w))),
        ("eta_k", _fmt(abs(s.eta_k))),
        ("eta_theta", _fmt(abs(s.eta_theta))),
        ("delta", _fmt(s.delta)),
        ("max_iters", s.max_iters),
        ("per_asset_budget", "true" if s.per_asset_budget else "false"),
        ("budget_penalty", _fmt(s.budget_penalty)),
        ("theta0", "auto" if s.theta0 is None else _fmt(s.theta0)),
        ("k0", _fmt(s.k0)),
    ]
    return "".join(f"{k}={v}\n" for k, v in items)


def abs_float(v) -> float:
    return abs(float(v))


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def spec_from_config(text: str) -> CampaignSpec:
    """Parse ``key=value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"config line {lineno}: expected key=value")
        key, val = (part.strip() for part in line.split("=", 1))
        values[key] = val

    known = {"n_assets", "n_scenarios", "distribution", "kappas", "n_trials", "base_seed",
             "eta_w", "eta_k", "eta_theta", "delta", "max_iters", "per_asset_budget",
             "budget_penalty", "theta0", "k0"}
    unknown = set(values) - known
    if unknown:
        raise DomainError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for required in ("n_assets", "n_scenarios", "kappas"):
        if required not in values:
            raise DomainError(f"config is missing {required}")

    try:
        market = MarketParams(
            int(values["n_assets"]), int(values["n_scenarios"]),
            Distribution(values.get("distribution", Distribution.GAUSSIAN.value)),
        )
        theta0 = values.get("theta0", "auto")
        solver = SolverConfig(
            eta_w=abs_float(values.get("eta_w", 1e-1)),
            eta_k=abs_float(values.get("eta_k", 1e-1)),
            eta_theta=abs_float(values.get("eta_theta", 1e-5)),
            delta=float(values.get("delta", 1e-5)),
            max_iters=int(values.get("max_iters", 1_000_000)),
            mode=Mode.MINIMIZE,
            per_asset_budget=_BOOL[values.get("per_asset_budget", "true").lower()],
            budget_penalty=float(values.get("budget_penalty", 0.0)),
            theta0=None if theta0 == "auto" else float(theta0),
            k0=float(values.get("k0", 1.0)),
        )
        return CampaignSpec(
            market=market,
            kappas=tuple(float(k) for k in values["kappas"].split(",") if k.strip()),
            n_trials=int(values.get("n_trials", 10)),
            solver=solver,
            base_seed=int(values.get("base_seed", 0)),
        )
    except (KeyError, ValueError) as exc:
        if isinstance(exc, DomainError):
            raise
        raise DomainError(f"bad config value: {exc}") from exc


def load_spec(path) -> CampaignSpec:
    with open(path) as fh:
        return spec_from_config(fh.read())
