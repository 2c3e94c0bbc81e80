"""Outer trust-region successive-convexification loop (NTO / NRTO / NRTO-LE)."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import constraints as cons
from . import inner_admm, lintraj, models
from .monte import Policy
from .uncertainty import ErrorEllipsoid

log = logging.getLogger(__name__)

MODES = ("nto", "nrto", "nrto-le")


@dataclass(frozen=True)
class OuterParams:
    """Trust-region / penalty schedule and convergence thresholds.

    r_trust and rho evolve across iterations; the literal_updates flag selects
    the printed one-shot updates (jump to r_min / rho_max on first trigger)
    instead of the clamped geometric ones.
    """

    r_trust: float = 5.0
    rho0: float = 1.0
    alpha: float = 0.7
    beta: float = 5.0
    eta1: float = 10.0
    eta2: float = 0.1
    r_min: float = 1e-3
    rho_max: float = 1e6
    eps_p: float = 1e-5
    eps_u: float = 1e-4
    max_outer: int = 100
    max_inner: int = 50
    mode: str = "nrto"
    literal_updates: bool = False
    rho: float = field(default=float("nan"))

    def __post_init__(self):
        if not (0.5 <= self.alpha < 1.0):
            raise ValueError(f"need alpha in [0.5, 1), got {self.alpha}")
        if not self.beta > 1.0:
            raise ValueError(f"need beta > 1, got {self.beta}")
        for name in ("r_trust", "rho0", "eta1", "eta2", "r_min", "rho_max",
                     "eps_p", "eps_u"):
            if not getattr(self, name) > 0:
                raise ValueError(f"need {name} > 0, got {getattr(self, name)}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if np.isnan(self.rho):
            object.__setattr__(self, "rho", self.rho0)


def update_trust_region(params: OuterParams, delta_u_norm: float,
                        residual: float) -> OuterParams:
    """Shrink the trust radius when ||du|| >= eta1 ||p - p~||."""
    if delta_u_norm < params.eta1 * residual:
        return params
    if params.literal_updates:
        new_r = min(params.alpha * params.r_trust, params.r_min)
    else:
        new_r = max(params.alpha * params.r_trust, params.r_min)
    return replace(params, r_trust=new_r)


def update_penalty(params: OuterParams, delta_u_norm: float,
                   residual: float) -> OuterParams:
    """Grow the penalty when ||du|| <= eta2 ||p - p~||."""
    if delta_u_norm > params.eta2 * residual:
        return params
    if params.literal_updates:
        new_rho = max(params.beta * params.rho, params.rho_max)
    else:
        new_rho = min(params.beta * params.rho, params.rho_max)
    return replace(params, rho=new_rho)


@dataclass
class IterationRecord:
    iteration: int
    delta_u_norm: float
    residual: float
    r_trust: float
    rho: float
    inner_iterations: int
    path: str  # "direct" | "admm" | "admm-fallback"
    objective: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SolveLog:
    records: list[IterationRecord] = field(default_factory=list)
    status: str = "running"  # "converged" | "max_outer"
    mode: str = ""

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def iterations(self) -> int:
        return len(self.records)

    def to_dict(self) -> dict:
        return {"status": self.status, "mode": self.mode,
                "iterations": self.iterations,
                "records": [r.to_dict() for r in self.records]}


def optimize(scenario, mode: str | None = None,
             error_sets: list[ErrorEllipsoid] | None = None,
             dump_hook=None) -> tuple[Policy, SolveLog]:
    """Run the full successive-convexification loop on a scenario.

    Per iteration: roll out the nominal from the current feed-forward controls,
    linearize dynamics and rows there, then either solve the tractable problem
    directly (residual gate passed; p and p~ aligned afterwards) or run the
    inner ADMM; apply delta_u; stop when ||delta_u|| <= eps_u and p = p~.
    NTO solves with tau = 0 on the same set; NRTO-LE additionally tightens
    every row by the fitted linearization-error support.
    """
    mode = mode or scenario.mode
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "nrto-le" and error_sets is None:
        raise ValueError("nrto-le mode needs fitted error ellipsoids")
    if mode != "nrto-le":
        error_sets = None

    params = scenario.outer_params(mode)
    model = scenario.build_model()
    cs = scenario.build_constraints()
    uset = scenario.build_uncertainty(tau=0.0 if mode == "nto" else None)
    x0 = np.asarray(scenario.x0, dtype=float)
    u_hat = scenario.initial_controls(model)
    R_u, R_K = scenario.cost_arrays(model)

    state = inner_admm.AdmmState.initial(cs.n_g, params.rho)
    solve_log = SolveLog(mode=mode)
    delta_u_norm = np.inf
    for it in range(1, params.max_outer + 1):
        nominal = models.rollout(model, x0, u_hat)
        A_list, B_list = models.linearize_along(model, nominal)
        blocks = lintraj.build_blocks(A_list, B_list)
        lin = cons.linearize(cs, nominal, blocks)
        ctx = inner_admm.TrajectoryContext(
            blocks=blocks, lin=lin, uset=uset, u_hat=u_hat, R_u=R_u, R_K=R_K,
            r_trust=params.r_trust, control_bounds=cs.control_bounds,
            error_sets=error_sets, dump_hook=dump_hook)
        state.rho = params.rho
        inner_iters = 0
        if state.residual <= params.eps_p:
            try:
                delta_u, K, p = inner_admm.direct_solve(ctx)
                state.p = p.copy()
                state.p_tilde = p.copy()
                path = "direct"
            except inner_admm.PrimalInfeasibleError:
                log.debug("outer %d: direct solve infeasible, falling back to ADMM", it)
                try:
                    delta_u, K, state, inner_iters = inner_admm.run_admm(
                        state, ctx, params.max_inner, params.eps_p)
                except inner_admm.InnerSolverError as err:
                    err.log = solve_log
                    raise
                path = "admm-fallback"
        else:
            try:
                delta_u, K, state, inner_iters = inner_admm.run_admm(
                    state, ctx, params.max_inner, params.eps_p)
            except inner_admm.InnerSolverError as err:
                err.log = solve_log
                raise
            path = "admm"

        u_hat = u_hat + delta_u.reshape(u_hat.shape)
        delta_u_norm = float(np.linalg.norm(delta_u))
        residual = state.residual
        objective = ctx.cost_u(delta_u) + ctx.cost_K(K)
        solve_log.records.append(IterationRecord(
            iteration=it, delta_u_norm=delta_u_norm, residual=residual,
            r_trust=params.r_trust, rho=params.rho, inner_iterations=inner_iters,
            path=path, objective=objective))
        log.debug("outer %d: |du| = %.3e, |p - p~| = %.3e, path = %s, obj = %.6g",
                  it, delta_u_norm, residual, path, objective)

        if delta_u_norm <= params.eps_u and np.array_equal(state.p, state.p_tilde):
            solve_log.status = "converged"
            break

        fired_trust = delta_u_norm >= params.eta1 * residual
        params = update_trust_region(params, delta_u_norm, residual)
        if not fired_trust:
            params = update_penalty(params, delta_u_norm, residual)
    else:
        solve_log.status = "max_outer"
        log.warning("outer loop hit max_outer = %d (|du| = %.3e)",
                    params.max_outer, delta_u_norm)

    policy = Policy(u_bar=u_hat.copy(), gains=K.blocks.copy(),
                    nominal=models.rollout(model, x0, u_hat))
    return policy, solve_log
