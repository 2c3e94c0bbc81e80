"""Two-block ADMM over the consensus split p = p~, plus the direct conic solve.

Block 1 owns (K, p~) under the worst-case SOC rows; block 2 owns (delta_u, p)
under the linearized rows, the trust region and direct control bounds. The
split's key property is graceful infeasibility handling: on an infeasible
split the residual ||p - p~|| stabilizes at the Euclidean distance between the
two feasible sets instead of diverging.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import solve_triangular

from . import conic
from .constraints import ControlBounds, LinearizedConstraintData
from .lintraj import PolicyMatrix, StackedBlocks
from .uncertainty import ErrorEllipsoid, UncertaintySet, error_support


class InnerSolverError(RuntimeError):
    """A block/conic solve came back non-optimal."""

    def __init__(self, msg: str, status: str = "", iteration: int | None = None):
        self.status = status
        self.iteration = iteration
        super().__init__(msg)


class PrimalInfeasibleError(InnerSolverError):
    """The direct solve certified primal infeasibility (caller falls back to ADMM)."""


@dataclass
class AdmmState:
    """Dual and slack state carried across outer iterations."""

    lam: np.ndarray
    p: np.ndarray
    p_tilde: np.ndarray
    rho: float
    residual_history: list[float] = field(default_factory=list)

    @classmethod
    def initial(cls, n_g: int, rho: float) -> "AdmmState":
        return cls(lam=np.zeros(n_g), p=np.zeros(n_g), p_tilde=np.zeros(n_g), rho=rho)

    @property
    def residual(self) -> float:
        return float(np.linalg.norm(self.p - self.p_tilde))


def cost_quadratic_K(R_K: np.ndarray, n_x: int) -> sparse.csc_matrix:
    """P block for the stacked row-major vec(K_k): 2 * bdiag(R_K^kT R_K^k (x) I)."""
    blocks = [2.0 * np.kron(Rk.T @ Rk, np.eye(n_x)) for Rk in R_K]
    return sparse.block_diag(blocks, format="csc")


class TrajectoryContext:
    """One outer iteration's frozen subproblem data and builders.

    Precomputes the SOC geometry of every robust row: with S = L L^T,
    row j reads sqrt(tau) * ||L^-1 Gamma^T (K^T a_j + b_j)|| <= slack_j - g_err_j
    where a_j = Fu^T grad_j and b_j = Fzeta^T grad_j.
    """

    def __init__(self, blocks: StackedBlocks, lin: LinearizedConstraintData,
                 uset: UncertaintySet, u_hat: np.ndarray, R_u: np.ndarray,
                 R_K: np.ndarray, r_trust: float,
                 control_bounds: ControlBounds | None = None,
                 error_sets: list[ErrorEllipsoid] | None = None,
                 dump_hook=None):
        self.blocks = blocks
        self.lin = lin
        self.uset = uset
        self.u_hat = np.asarray(u_hat, dtype=float)
        self.R_u = np.asarray(R_u, dtype=float)
        self.R_K = np.asarray(R_K, dtype=float)
        self.r_trust = float(r_trust)
        self.control_bounds = control_bounds
        self.error_sets = error_sets
        self.dump_hook = dump_hook

        T, n_x, n_u = blocks.horizon, blocks.n_x, blocks.n_u
        self.T, self.n_x, self.n_u = T, n_x, n_u
        self.n_du = T * n_u
        self.n_kvec = T * n_u * n_x
        self.n_g = lin.n_g

        sqrt_tau = np.sqrt(uset.tau)
        L = uset.chol_S
        n_z = uset.n_z
        # G_j kappa = sqrt(tau) L^-1 Gamma^T K^T a_j for row-major kappa = vec(K)
        a3 = lin.J_u.reshape(self.n_g, T, n_u)
        Gb = uset.Gamma.reshape(T + 1, n_x, n_z)[:T]
        raw = np.einsum("jkr,kcz->jzkrc", a3, Gb).reshape(self.n_g, n_z, self.n_kvec)
        flat = raw.transpose(1, 0, 2).reshape(n_z, -1)
        solved = solve_triangular(L, flat, lower=True)
        self.soc_G = sqrt_tau * solved.reshape(n_z, self.n_g, self.n_kvec).transpose(1, 0, 2)
        W = lin.J_zeta @ uset.Gamma  # (n_g, n_z)
        self.soc_h = sqrt_tau * solve_triangular(L, W.T, lower=True).T
        if error_sets is not None:
            self.g_err = np.array([error_support(error_sets, lin.grad[j])
                                   for j in range(self.n_g)])
        else:
            self.g_err = np.zeros(self.n_g)

        self.P_K = cost_quadratic_K(self.R_K, n_x)
        # Q_u(du) = sum (u_k + du_k)^T R_u^k (u_k + du_k), quadratic part in du
        self.P_u = sparse.block_diag([2.0 * Rk for Rk in self.R_u], format="csc")
        self.q_u = 2.0 * np.einsum("kij,kj->ki", self.R_u, self.u_hat).reshape(-1)
        self._warm: dict[str, conic.ConicSolution] = {}

    # objective values used for logging and tests
    def cost_u(self, delta_u: np.ndarray) -> float:
        u = self.u_hat + np.asarray(delta_u, dtype=float).reshape(self.T, self.n_u)
        return float(np.einsum("ki,kij,kj->", u, self.R_u, u))

    def cost_K(self, K: PolicyMatrix) -> float:
        return float(sum(np.linalg.norm(Rk @ Kk, "fro") ** 2
                         for Rk, Kk in zip(self.R_K, K.blocks)))

    def _control_bound_rows(self, n_vars: int, du_sl: slice):
        if self.control_bounds is None:
            return None, None
        lo = self.control_bounds.lo.reshape(-1)
        hi = self.control_bounds.hi.reshape(-1)
        uh = self.u_hat.reshape(-1)
        eye = np.eye(self.n_du)
        A = np.zeros((2 * self.n_du, n_vars))
        A[: self.n_du, du_sl] = eye
        A[self.n_du :, du_sl] = -eye
        b = np.concatenate([hi - uh, uh - lo])
        return A, b

    def _robust_rows(self, n_vars: int, k_sl: slice, slack_sl: slice):
        """Worst-case rows as (socs, A_in, b_in); linear when tau = 0.

        At tau = 0 the norm argument is identically zero, which would leave
        degenerate cones in the program; the rows reduce to g_err_j <= slack_j.
        """
        if self.uset.tau == 0.0:
            A = np.zeros((self.n_g, n_vars))
            A[:, slack_sl] = -np.eye(self.n_g)
            return [], A, -self.g_err.copy()
        rows = []
        for j in range(self.n_g):
            G = np.zeros((self.uset.n_z, n_vars))
            G[:, k_sl] = self.soc_G[j]
            c = np.zeros(n_vars)
            c[slack_sl.start + j] = 1.0
            rows.append(conic.SocRow(G=G, h=self.soc_h[j], c=c, d=-self.g_err[j]))
        return rows, None, None

    def _trust_row(self, n_vars: int, du_sl: slice) -> conic.SocRow:
        G = np.zeros((self.blocks.Fu.shape[0], n_vars))
        G[:, du_sl] = self.blocks.Fu
        return conic.SocRow(G=G, h=np.zeros(G.shape[0]), c=np.zeros(n_vars), d=self.r_trust)

    def build_block1_program(self, state: AdmmState) -> conic.ConicProgram:
        """(K, p~) minimization of the AL under the worst-case SOC rows."""
        n = self.n_kvec + self.n_g
        k_sl = slice(0, self.n_kvec)
        pt_sl = slice(self.n_kvec, n)
        P = sparse.block_diag([self.P_K, state.rho * sparse.eye(self.n_g)], format="csc")
        q = np.concatenate([np.zeros(self.n_kvec), -state.lam - state.rho * state.p])
        socs, A_in, b_in = self._robust_rows(n, k_sl, pt_sl)
        return conic.ConicProgram(
            P=P, q=q, A_in=A_in, b_in=b_in, socs=socs,
            layout={"K": k_sl, "p_tilde": pt_sl})

    def build_block2_program(self, state: AdmmState) -> conic.ConicProgram:
        """(delta_u, p) minimization under linearized rows, trust region, bounds."""
        n = self.n_du + self.n_g
        du_sl = slice(0, self.n_du)
        p_sl = slice(self.n_du, n)
        P = sparse.block_diag([self.P_u, state.rho * sparse.eye(self.n_g)], format="csc")
        q = np.concatenate([self.q_u, state.lam - state.rho * state.p_tilde])
        A_in = np.hstack([self.lin.J_u, np.eye(self.n_g)])
        b_in = -self.lin.g_hat
        Ab, bb = self._control_bound_rows(n, du_sl)
        if Ab is not None:
            A_in = np.vstack([A_in, Ab])
            b_in = np.concatenate([b_in, bb])
        return conic.ConicProgram(
            P=P, q=q, A_in=A_in, b_in=b_in, socs=[self._trust_row(n, du_sl)],
            layout={"delta_u": du_sl, "p": p_sl})

    def build_direct_program(self) -> conic.ConicProgram:
        """Joint (delta_u, K, p) program: the full tractable linearized problem."""
        n = self.n_du + self.n_kvec + self.n_g
        du_sl = slice(0, self.n_du)
        k_sl = slice(self.n_du, self.n_du + self.n_kvec)
        p_sl = slice(self.n_du + self.n_kvec, n)
        P = sparse.block_diag(
            [self.P_u, self.P_K, sparse.csc_matrix((self.n_g, self.n_g))], format="csc")
        q = np.concatenate([self.q_u, np.zeros(self.n_kvec + self.n_g)])
        A_in = np.zeros((self.n_g, n))
        A_in[:, du_sl] = self.lin.J_u
        A_in[:, p_sl] = np.eye(self.n_g)
        b_in = -self.lin.g_hat
        Ab, bb = self._control_bound_rows(n, du_sl)
        if Ab is not None:
            A_in = np.vstack([A_in, Ab])
            b_in = np.concatenate([b_in, bb])
        socs, A_rob, b_rob = self._robust_rows(n, k_sl, p_sl)
        if A_rob is not None:
            A_in = np.vstack([A_in, A_rob])
            b_in = np.concatenate([b_in, b_rob])
        socs.append(self._trust_row(n, du_sl))
        return conic.ConicProgram(
            P=P, q=q, A_in=A_in, b_in=b_in, socs=socs,
            layout={"delta_u": du_sl, "K": k_sl, "p": p_sl})

    def _solve(self, prog: conic.ConicProgram, tag: str) -> conic.ConicSolution:
        if self.dump_hook is not None:
            self.dump_hook(tag, prog)
        sol = conic.solve(prog, warm_start=self._warm.get(tag))
        if sol.status == conic.OPTIMAL:
            self._warm[tag] = sol
        return sol

    def vec_to_policy(self, kvec: np.ndarray) -> PolicyMatrix:
        return PolicyMatrix(kvec.reshape(self.T, self.n_u, self.n_x))

    def solve_block1(self, state: AdmmState) -> tuple[PolicyMatrix, np.ndarray]:
        sol = self._solve(self.build_block1_program(state), "block1")
        if sol.status != conic.OPTIMAL:
            raise InnerSolverError(f"block 1 solve returned {sol.status} "
                                   f"(backend {sol.backend_status})", status=sol.status)
        return self.vec_to_policy(sol.group_of("K")), sol.group_of("p_tilde")

    def solve_block2(self, state: AdmmState) -> tuple[np.ndarray, np.ndarray]:
        sol = self._solve(self.build_block2_program(state), "block2")
        if sol.status != conic.OPTIMAL:
            raise InnerSolverError(f"block 2 solve returned {sol.status} "
                                   f"(backend {sol.backend_status})", status=sol.status)
        return sol.group_of("delta_u"), sol.group_of("p")


def block1_update(state: AdmmState, ctx) -> tuple[PolicyMatrix, np.ndarray]:
    """First ADMM block: updates (K, p~) in place on the state."""
    K, p_tilde = ctx.solve_block1(state)
    state.p_tilde = np.asarray(p_tilde, dtype=float)
    return K, state.p_tilde


def block2_update(state: AdmmState, ctx) -> tuple[np.ndarray, np.ndarray]:
    """Second ADMM block: updates (delta_u, p) in place on the state."""
    delta_u, p = ctx.solve_block2(state)
    state.p = np.asarray(p, dtype=float)
    return delta_u, state.p


def dual_update(state: AdmmState) -> AdmmState:
    """lam += rho (p - p~); appends ||p - p~|| to the residual history."""
    r = state.p - state.p_tilde
    state.lam = state.lam + state.rho * r
    state.residual_history.append(float(np.linalg.norm(r)))
    return state


def run_admm(state: AdmmState, ctx, max_iter: int, eps_p: float):
    """Sweep block1 -> block2 -> dual until ||p - p~|| <= eps_p or max_iter.

    ctx provides solve_block1(state) -> (K, p~) and solve_block2(state) ->
    (delta_u, p); state carries (lam, p, p~) into the next outer iteration.
    """
    if max_iter < 1:
        raise ValueError(f"need max_iter >= 1, got {max_iter}")
    delta_u = K = None
    iters = 0
    for _ in range(max_iter):
        try:
            K, _ = block1_update(state, ctx)
            delta_u, _ = block2_update(state, ctx)
        except InnerSolverError as err:
            err.iteration = iters + 1
            raise
        dual_update(state)
        iters += 1
        if state.residual_history[-1] <= eps_p:
            break
    return delta_u, K, state, iters


def direct_solve(ctx) -> tuple[np.ndarray, PolicyMatrix, np.ndarray]:
    """Solve the full tractable problem in one conic program.

    Returns (delta_u, K, p); the caller aligns p~ with p afterwards. A
    certified infeasible program raises PrimalInfeasibleError so the outer
    loop can fall back to ADMM for the iteration.
    """
    prog = ctx.build_direct_program()
    if ctx.dump_hook is not None:
        ctx.dump_hook("direct", prog)
    sol = conic.solve(prog)
    if sol.status == conic.PRIMAL_INFEASIBLE:
        raise PrimalInfeasibleError("direct solve certified primal infeasible",
                                    status=sol.status)
    if sol.status != conic.OPTIMAL:
        raise InnerSolverError(f"direct solve returned {sol.status} "
                               f"(backend {sol.backend_status})", status=sol.status)
    return sol.group_of("delta_u"), ctx.vec_to_policy(sol.group_of("K")), sol.group_of("p")
