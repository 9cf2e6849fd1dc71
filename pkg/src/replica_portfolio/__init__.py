"""Extremal investment concentration under budget and risk constraints.

Replica-symmetric predictions (:mod:`.replica`) and Lagrangian steepest
descent on sampled markets (:mod:`.optimizer`, :mod:`.experiment`).
"""
from .errors import CampaignError, ConvergenceError, DivergenceError, DomainError
from .market import (
    Distribution, MarketParams, MarketSample, WishartMetric, budget_residual,
    concentration, derive_seed, generate_market, risk, wishart,
)
from .optimizer import Mode, SolveReport, SolverConfig, SolverState, gradients, lagrangian, solve
from .replica import (
    Branch, DualPoint, ModelPoint, ReplicaBounds, SaddleState, Sign,
    annealed_concentration, dual_kappa, dual_risk, minimal_risk_per_asset,
    q_bounds, saddle_asymptotics, saddle_residuals, saddle_solve,
)

__version__ = "0.1.0"
