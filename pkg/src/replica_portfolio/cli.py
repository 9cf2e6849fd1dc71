"""Command-line front end: ``replica-portfolio <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure (non-convergence), 2 usage or
domain error.
"""
from __future__ import annotations

import argparse
import math
import sys
from contextlib import contextmanager
from dataclasses import replace

from . import experiment as ex
from .errors import CampaignError, ConvergenceError, DivergenceError, DomainError
from .market import Distribution, MarketParams, generate_market, save_market_csv, wishart
from .optimizer import Mode, SolverConfig, solve
from .replica import (
    Branch, DualPoint, ModelPoint, annealed_concentration, dual_kappa, dual_risk,
    minimal_risk_per_asset, q_bounds, saddle_residuals, saddle_solve,
)

GRID_TOL = 1e-12


class UsageError(Exception):
    def __init__(self, flag, message):
        super().__init__(f"{flag}: {message}")


def _fmt(x) -> str:
    return ex._fmt(x)


def parse_grid(text: str) -> list[float]:
    """``start:stop:step``, stop included when it is hit to within 1e-12."""
    try:
        start, stop, step = (float(p) for p in text.split(":"))
    except ValueError:
        raise UsageError("--kappa-grid", f"expected start:stop:step, got {text!r}") from None
    if not step > 0 or stop < start:
        raise UsageError("--kappa-grid", "need step > 0 and stop >= start")
    n = int(math.floor((stop - start) / step + GRID_TOL))
    out = [start + i * step for i in range(n + 1)]
    if abs(out[-1] - stop) <= GRID_TOL * max(1.0, abs(stop)):
        out[-1] = stop
    elif out[-1] + step - stop <= GRID_TOL * max(1.0, abs(stop)):
        out.append(stop)
    return out


def _table(header, rows) -> str:
    cells = [list(header)] + [[_human(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) + "\n" for r in cells)


def _human(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, int):
        return str(v)
    return format(float(v), ".10g")


@contextmanager
def _sink(path):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _emit(args, header, rows) -> None:
    if args.format == "csv":
        with _sink(args.out) as fh:
            ex._write_rows(fh, header, rows)
    else:
        text = _table(header, rows)
        if args.out is None:
            sys.stdout.write(text)
        else:
            with open(args.out, "w") as fh:
                fh.write(text)


def _point(args) -> ModelPoint:
    if args.alpha is None or not args.alpha > 1:
        raise UsageError("--alpha", f"alpha must satisfy alpha > 1 (got {args.alpha})")
    if args.kappa is not None and not args.kappa >= 1:
        raise UsageError("--kappa", f"kappa must satisfy kappa >= 1 (got {args.kappa})")
    return ModelPoint(args.alpha, 1.0 if args.kappa is None else args.kappa)


# -- subcommands -----------------------------------------------------------------

def cmd_replica(args) -> int:
    if (args.kappa is None) == (args.kappa_grid is None):
        raise UsageError("--kappa", "give exactly one of --kappa or --kappa-grid")
    kappas = [args.kappa] if args.kappa is not None else parse_grid(args.kappa_grid)
    rows = []
    for kappa in kappas:
        args.kappa = kappa
        b = q_bounds(_point(args))
        rows.append((kappa, b.q_max, b.q_min, annealed_concentration(kappa)))
    _emit(args, ("kappa", "q_max", "q_min", "annealed_q"), rows)
    return 0


def cmd_saddle(args) -> int:
    point = _point(args)
    if args.kappa == 1:
        raise UsageError("--kappa", "the finite-beta saddle needs kappa > 1")
    if args.beta == 0 or not math.isfinite(args.beta):
        raise UsageError("--beta", "beta must be finite and nonzero")
    state = saddle_solve(point, args.beta)
    res = saddle_residuals(state, point)
    b = q_bounds(point)
    bound = b.q_max if args.beta > 0 else b.q_min
    rows = [
        ("k", state.k), ("theta", state.theta), ("chi_w", state.chi_w), ("q_w", state.q_w),
        ("chi_w_tilde", state.chi_w_tilde), ("q_w_tilde", state.q_w_tilde), ("beta", state.beta),
        ("chi_w+q_w", state.total_concentration), ("replica_bound", bound),
        ("max_residual", float(res.max())),
    ]
    rows += [(f"residual_{i + 1}", float(r)) for i, r in enumerate(res)]
    _emit(args, ("quantity", "value"), rows)
    return 0


def cmd_dual(args) -> int:
    if args.alpha is None or not args.alpha > 1:
        raise UsageError("--alpha", f"alpha must satisfy alpha > 1 (got {args.alpha})")
    if not args.tau >= 1:
        raise UsageError("--tau", f"tau must satisfy tau >= 1 (got {args.tau})")
    dual = DualPoint(args.tau, Branch(args.branch))
    kappa = dual_kappa(args.alpha, dual)
    eps = dual_risk(args.alpha, dual)
    b = q_bounds(ModelPoint(args.alpha, kappa))
    back = b.q_max if dual.branch is Branch.MAX else b.q_min
    ok = abs(back - args.tau) <= 1e-10 * max(1.0, args.tau)
    ident = abs(eps - kappa * minimal_risk_per_asset(args.alpha)) <= 1e-12 * max(1.0, abs(eps))
    name = "epsilon_prime" if dual.branch is Branch.MAX else "epsilon_double_prime"
    _emit(args, ("quantity", "value"), [
        ("kappa", kappa), (name, eps), ("round_trip_tau", back),
        ("round_trip", "OK" if ok else "FAIL"), ("risk_identity", "OK" if ident else "FAIL"),
    ])
    return 0


def _solver_from_args(args, mode: Mode) -> SolverConfig:
    base = SolverConfig.standard(mode)
    over = {}
    for flag, key in (("eta_w", "eta_w"), ("eta_k", "eta_k"), ("eta_theta", "eta_theta")):
        v = getattr(args, flag)
        if v is not None:
            over[key] = mode.sign * abs(v)
    if args.delta is not None:
        if not args.delta > 0:
            raise UsageError("--delta", "delta must be positive")
        over["delta"] = args.delta
    if args.max_iters is not None:
        if args.max_iters < 1:
            raise UsageError("--max-iters", "max_iters must be >= 1")
        over["max_iters"] = args.max_iters
    if args.budget_penalty is not None:
        if args.budget_penalty < 0:
            raise UsageError("--budget-penalty", "must be non-negative")
        over["budget_penalty"] = args.budget_penalty
    if args.theta0 is not None:
        over["theta0"] = args.theta0
    if args.extensive_budget:
        over["per_asset_budget"] = False
    return replace(base, **over)


def _market_from_args(args, seed) -> MarketParams:
    if args.n is None or args.n < 2:
        raise UsageError("--n", "need at least 2 assets")
    if args.p is None or args.p < 1:
        raise UsageError("--p", "need at least 1 scenario")
    if not args.p > args.n:
        raise UsageError("--p", "alpha = p/N must exceed 1")
    if not 0 <= seed < 2**64:
        raise UsageError("--seed", "seed must be a 64-bit unsigned integer")
    return MarketParams(args.n, args.p, Distribution(args.distribution), seed)


def cmd_solve(args) -> int:
    params = _market_from_args(args, args.seed)
    if args.kappa is None or not args.kappa >= 1:
        raise UsageError("--kappa", f"kappa must satisfy kappa >= 1 (got {args.kappa})")
    point = ModelPoint(params.alpha, args.kappa)
    config = _solver_from_args(args, Mode(args.mode))
    sample = generate_market(params)
    if args.dump_market:
        save_market_csv(sample, args.dump_market)
    J = wishart(sample)
    trace_fh = open(args.trace, "w", newline="") if args.trace else None
    try:
        report = solve(J, point, config, trace=trace_fh, trace_every=args.trace_every)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        if trace_fh is not None:
            trace_fh.close()
    b = q_bounds(point)
    bound = b.q_min if config.mode is Mode.MINIMIZE else b.q_max
    _emit(args, ("quantity", "value"), [
        ("mode", config.mode.value), ("converged", report.converged),
        ("iterations", report.iterations), ("q_w", report.q_w),
        ("replica_bound", bound),
        ("budget_residual", report.budget_residual), ("risk_residual", report.risk_residual),
        ("k", report.final.k), ("theta", report.final.theta),
        ("last_delta", report.final.last_delta),
    ])
    if not report.converged:
        print("error: iteration cap reached before Delta < delta", file=sys.stderr)
        return 1
    return 0


def _campaign_spec(args) -> ex.CampaignSpec:
    if args.config:
        spec = ex.load_spec(args.config)
        if args.seed is not None:
            spec = replace(spec, base_seed=args.seed)
        return spec
    if args.full_scale:
        args.n, args.p = 1000, 3000
        args.trials = 10 if args.trials is None else args.trials
    if args.kappas is not None and args.kappa_grid is not None:
        raise UsageError("--kappas", "give either --kappas or --kappa-grid")
    if args.kappa_grid is not None:
        kappas = parse_grid(args.kappa_grid)
    elif args.kappas is not None:
        try:
            kappas = [float(k) for k in args.kappas.split(",")]
        except ValueError:
            raise UsageError("--kappas", "expected a comma-separated list") from None
    else:
        kappas = [1.1, 1.5, 2.0, 3.0]
    if any(not k >= 1 for k in kappas):
        raise UsageError("--kappas", "every kappa must be >= 1")
    trials = 10 if args.trials is None else args.trials
    if trials < 1:
        raise UsageError("--trials", "need at least one trial")
    seed = 0 if args.seed is None else args.seed
    market = _market_from_args(args, 0)
    solver = _solver_from_args(args, Mode.MINIMIZE)
    return ex.CampaignSpec(market, tuple(kappas), trials, solver, seed)


def cmd_campaign(args) -> int:
    spec = _campaign_spec(args)
    if args.save_config:
        with open(args.save_config, "w") as fh:
            fh.write(ex.spec_to_config(spec))

    def progress(rec):
        print(f"kappa={rec.kappa:g} q_max={rec.q_max_mean:.6g}+-{rec.q_max_stderr:.2g} "
              f"(n={rec.n_converged_max}) q_min={rec.q_min_mean:.6g}+-{rec.q_min_stderr:.2g} "
              f"(n={rec.n_converged_min})", file=sys.stderr)

    try:
        summary = ex.run_campaign(spec, jobs=args.jobs, progress=progress)
    except CampaignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for w in summary.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.trials_out:
        with open(args.trials_out, "w", newline="") as fh:
            ex.write_trials_csv(summary, fh)
    if args.plot_out:
        with open(args.plot_out, "w", newline="") as fh:
            ex.write_plot_csv(spec.alpha, parse_grid("1:10:0.01"), fh)
    if args.format == "csv":
        with _sink(args.out) as fh:
            ex.write_results_csv(summary, fh)
    else:
        rows = []
        for r, d in zip(summary.records, ex.compare(summary)):
            rows.append((r.kappa, r.q_max_mean, r.q_max_stderr, r.replica_q_max, d.z_max,
                         r.q_min_mean, r.q_min_stderr, r.replica_q_min, d.z_min,
                         r.n_converged_max, r.n_converged_min))
        header = ("kappa", "q_max", "se", "replica", "z", "q_min", "se", "replica", "z", "n_max", "n_min")
        text = _table(header, rows)
        if args.out is None:
            sys.stdout.write(text)
        else:
            with open(args.out, "w") as fh:
                fh.write(text)
    return 0


# -- parser ------------------------------------------------------------------------

def _add_output(p):
    p.add_argument("--out", help="write output to this file instead of stdout")
    p.add_argument("--format", choices=("table", "csv"), default="table")


def _add_solver_flags(p):
    g = p.add_argument_group("solver")
    g.add_argument("--eta-w", type=float, help="weight step magnitude (default 0.1)")
    g.add_argument("--eta-k", type=float, help="budget-multiplier step magnitude (default 0.1)")
    g.add_argument("--eta-theta", type=float, help="risk-multiplier step magnitude (default 1e-5)")
    g.add_argument("--delta", type=float, help="stopping threshold (default 1e-5)")
    g.add_argument("--max-iters", type=int, help="iteration cap (default 1e6)")
    g.add_argument("--budget-penalty", type=float, help="budget penalty rho (default 0)")
    g.add_argument("--theta0", type=float, help="initial risk multiplier (default +1 min, -1 max)")
    g.add_argument("--extensive-budget", action="store_true",
                   help="use N - e.w instead of 1 - e.w/N for the budget multiplier")


def _add_market_flags(p, seed_default):
    p.add_argument("--n", type=int, help="number of assets N")
    p.add_argument("--p", type=int, help="number of scenarios p")
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--distribution", choices=[d.value for d in Distribution],
                   default=Distribution.GAUSSIAN.value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="replica-portfolio",
        description="Extremal investment concentration under budget and risk constraints.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("replica", help="closed-form q_max, q_min and annealed q")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--kappa", type=float)
    p.add_argument("--kappa-grid", metavar="START:STOP:STEP")
    _add_output(p)
    p.set_defaults(func=cmd_replica)

    p = sub.add_parser("saddle", help="solve the finite-beta saddle-point system")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    _add_output(p)
    p.set_defaults(func=cmd_saddle)

    p = sub.add_parser("dual", help="map a target concentration to kappa and risk")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--branch", choices=[b.value for b in Branch], default=Branch.MAX.value)
    _add_output(p)
    p.set_defaults(func=cmd_dual)

    p = sub.add_parser("solve", help="steepest descent on one random market")
    _add_market_flags(p, 0)
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.MINIMIZE.value)
    p.add_argument("--trace", help="stream the iteration trace to this CSV file")
    p.add_argument("--trace-every", type=int, default=1)
    p.add_argument("--dump-market", help="write the raw return matrix to this CSV file")
    _add_solver_flags(p)
    _add_output(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("campaign", help="disorder-averaged comparison with the replica bounds")
    p.add_argument("--config", help="key=value campaign file (other market/solver flags ignored)")
    _add_market_flags(p, None)
    p.add_argument("--kappas", help="comma-separated kappa values")
    p.add_argument("--kappa-grid", metavar="START:STOP:STEP")
    p.add_argument("--trials", type=int, help="number of disorder samples M (default 10)")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all CPUs)")
    p.add_argument("--full-scale", action="store_true", help="N=1000, p=3000, M=10")
    p.add_argument("--trials-out", help="per-trial CSV")
    p.add_argument("--plot-out", help="dense replica curve CSV for the figures")
    p.add_argument("--save-config", help="write the effective campaign config here")
    _add_solver_flags(p)
    _add_output(p)
    p.set_defaults(func=cmd_campaign)
    return parser


def _glue_negatives(argv: list[str]) -> list[str]:
    # argparse mistakes values like -1e6 for options
    out = []
    for tok in argv:
        if out and out[-1].startswith("--") and "=" not in out[-1] and tok.startswith("-"):
            try:
                float(tok)
            except ValueError:
                pass
            else:
                out[-1] = f"{out[-1]}={tok}"
                continue
        out.append(tok)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_glue_negatives(argv))
    try:
        return args.func(args)
    except (UsageError, DomainError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
