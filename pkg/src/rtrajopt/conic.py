"""Canonical conic quadratic programs and the shared subproblem solver.

The container is

    minimize   0.5 x^T P x + q^T x
    subject to A_eq x = b_eq
               A_in x <= b_in
               ||G_i x + h_i||_2 <= c_i^T x + d_i   for each SOC row i

which is handed to Clarabel in its (A x + s = b, s in K) form. KKT residuals
are recomputed here from the assembled data rather than trusted from the
backend, and a solution is only reported optimal when they meet the contract.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import clarabel
import numpy as np
from scipy import sparse

OPTIMAL = "optimal"
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"
ITERATION_LIMIT = "iteration_limit"

KKT_TOL = 1e-7


@dataclass(frozen=True)
class SocRow:
    """Second-order cone row ||G x + h|| <= c^T x + d."""

    G: np.ndarray
    h: np.ndarray
    c: np.ndarray
    d: float

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        h = np.asarray(self.h, dtype=float).reshape(-1)
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if G.shape[0] != h.shape[0] or G.shape[1] != c.shape[0]:
            raise ValueError(f"SOC row shapes inconsistent: G {G.shape}, h {h.shape}, c {c.shape}")
        if G.shape[0] < 1:
            raise ValueError("SOC row needs at least a 1-dimensional norm argument")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", float(self.d))


class ConicProgram:
    """Immutable conic QP over equality, nonnegative and second-order cone blocks."""

    def __init__(self, P, q, A_eq=None, b_eq=None, A_in=None, b_in=None,
                 socs: list[SocRow] | None = None, layout: dict[str, slice] | None = None):
        self.q = np.asarray(q, dtype=float).reshape(-1)
        self.n = self.q.shape[0]
        self.P = sparse.csc_matrix(P) if P is not None else sparse.csc_matrix((self.n, self.n))
        if self.P.shape != (self.n, self.n):
            raise ValueError(f"P shape {self.P.shape} != ({self.n}, {self.n})")
        self._validate_psd()
        self.A_eq, self.b_eq = self._block(A_eq, b_eq, "eq")
        self.A_in, self.b_in = self._block(A_in, b_in, "in")
        self.socs = list(socs or [])
        for row in self.socs:
            if row.G.shape[1] != self.n:
                raise ValueError(f"SOC row width {row.G.shape[1]} != n = {self.n}")
        self.layout = dict(layout or {})

    def _block(self, A, b, what):
        if A is None:
            return np.zeros((0, self.n)), np.zeros(0)
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape != (b.shape[0], self.n):
            raise ValueError(f"{what} block shapes inconsistent: A {A.shape}, b {b.shape}")
        return A, b

    def _validate_psd(self):
        Pd = self.P.toarray()
        scale = max(1.0, np.abs(Pd).max())
        if not np.allclose(Pd, Pd.T, rtol=0.0, atol=1e-9 * scale):
            raise ValueError("P must be symmetric")
        # Cholesky of P + shift acts as the eigenvalue >= -1e-10 check.
        try:
            np.linalg.cholesky(Pd + 1e-10 * scale * np.eye(self.n))
        except np.linalg.LinAlgError:
            raise ValueError("P must be positive semidefinite") from None

    @property
    def n_eq(self) -> int:
        return self.b_eq.shape[0]

    @property
    def n_in(self) -> int:
        return self.b_in.shape[0]

    def clarabel_data(self):
        """(A, b, cones) in Clarabel's A x + s = b, s in K convention."""
        mats = []
        rhs = []
        cones = []
        if self.n_eq:
            mats.append(self.A_eq)
            rhs.append(self.b_eq)
            cones.append(clarabel.ZeroConeT(self.n_eq))
        if self.n_in:
            mats.append(self.A_in)
            rhs.append(self.b_in)
            cones.append(clarabel.NonnegativeConeT(self.n_in))
        for row in self.socs:
            mats.append(np.vstack([-row.c[None, :], -row.G]))
            rhs.append(np.concatenate([[row.d], row.h]))
            cones.append(clarabel.SecondOrderConeT(row.G.shape[0] + 1))
        if mats:
            A = sparse.csc_matrix(np.vstack(mats))
            b = np.concatenate(rhs)
        else:
            A = sparse.csc_matrix((0, self.n))
            b = np.zeros(0)
        return A, b, cones

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x)

    def describe(self) -> str:
        """Human-readable dump of dimensions, nonzeros and cone layout."""
        lines = [
            f"conic program: n = {self.n}, nnz(P) = {self.P.nnz}",
            f"  equalities:   {self.n_eq}",
            f"  inequalities: {self.n_in}",
            f"  soc rows:     {len(self.socs)} "
            f"(arity {[r.G.shape[0] + 1 for r in self.socs][:12]}"
            f"{'...' if len(self.socs) > 12 else ''})",
        ]
        for name, sl in self.layout.items():
            lines.append(f"  var {name}: [{sl.start}:{sl.stop}]")
        return "\n".join(lines)


@dataclass
class ConicSolution:
    x: np.ndarray
    status: str
    duals: dict[str, np.ndarray] = field(default_factory=dict)
    r_prim: float = np.inf
    r_dual: float = np.inf
    r_gap: float = np.inf
    obj: float = np.nan
    iterations: int = 0
    backend_status: str = ""
    layout: dict[str, slice] = field(default_factory=dict)

    def group_of(self, name: str) -> np.ndarray:
        """Slice the primal solution by the originating program's variable layout."""
        return self.x[self.layout[name]]


def kkt_residuals(prog: ConicProgram, x: np.ndarray, z: np.ndarray) -> tuple[float, float, float]:
    """Relative primal/dual/gap residuals recomputed from the program data.

    z is the stacked cone dual in the same row order as clarabel_data().
    """
    A, b, _ = prog.clarabel_data()
    s = b - A @ x
    # primal: equality exactness, nonnegativity of slacks, SOC membership of slacks
    viol = 0.0
    if prog.n_eq:
        viol = max(viol, np.abs(s[: prog.n_eq]).max())
    off = prog.n_eq
    if prog.n_in:
        viol = max(viol, max(0.0, -(s[off : off + prog.n_in]).min()))
        off += prog.n_in
    for row in prog.socs:
        m = row.G.shape[0] + 1
        blk = s[off : off + m]
        viol = max(viol, max(0.0, np.linalg.norm(blk[1:]) - blk[0]))
        off += m
    scale_p = 1.0 + max(np.abs(b).max(initial=0.0), np.abs(A @ x).max(initial=0.0))
    r_prim = viol / scale_p

    Px = prog.P @ x
    dual_vec = Px + prog.q + A.T @ z
    scale_d = 1.0 + max(np.abs(prog.q).max(initial=0.0), np.abs(Px).max(initial=0.0),
                        np.abs(A.T @ z).max(initial=0.0))
    r_dual = np.abs(dual_vec).max(initial=0.0) / scale_d

    p_obj = prog.objective(x)
    d_obj = -0.5 * float(x @ Px) - float(b @ z)
    r_gap = abs(p_obj - d_obj) / (1.0 + abs(p_obj) + abs(d_obj))
    return float(r_prim), float(r_dual), float(r_gap)


_STATUS_MAP = {
    "PrimalInfeasible": PRIMAL_INFEASIBLE,
    "AlmostPrimalInfeasible": PRIMAL_INFEASIBLE,
    "DualInfeasible": DUAL_INFEASIBLE,
    "AlmostDualInfeasible": DUAL_INFEASIBLE,
}


def _split_duals(prog: ConicProgram, z: np.ndarray) -> dict[str, np.ndarray]:
    duals = {"eq": z[: prog.n_eq], "in": z[prog.n_eq : prog.n_eq + prog.n_in]}
    off = prog.n_eq + prog.n_in
    socs = []
    for row in prog.socs:
        m = row.G.shape[0] + 1
        socs.append(z[off : off + m])
        off += m
    duals["soc"] = socs
    return duals


def solve(prog: ConicProgram, warm_start: ConicSolution | None = None,
          max_iter: int = 200) -> ConicSolution:
    """Solve the program; optimal status implies KKT residuals <= 1e-7.

    warm_start is accepted for interface stability; the interior-point backend
    restarts cold, so it only matters for backends that support it.
    """
    del warm_start
    A, b, cones = prog.clarabel_data()
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.max_threads = 1
    settings.tol_gap_abs = 1e-9
    settings.tol_gap_rel = 1e-9
    settings.tol_feas = 1e-9
    try:
        solver = clarabel.DefaultSolver(prog.P, prog.q, A, b, cones, settings)
        res = solver.solve()
    except BaseException as err:  # backend panic: report, never crash
        return ConicSolution(x=np.zeros(prog.n), status=ITERATION_LIMIT,
                             backend_status=f"backend error: {err}", layout=prog.layout)
    backend = str(res.status)
    x = np.asarray(res.x, dtype=float)
    z = np.asarray(res.z, dtype=float)
    status = _STATUS_MAP.get(backend)
    if status is not None:
        return ConicSolution(x=x, status=status, duals=_split_duals(prog, z),
                             iterations=res.iterations, backend_status=backend,
                             layout=prog.layout)
    r_prim, r_dual, r_gap = kkt_residuals(prog, x, z)
    ok = backend in ("Solved", "AlmostSolved") and max(r_prim, r_dual, r_gap) <= KKT_TOL
    return ConicSolution(
        x=x,
        status=OPTIMAL if ok else ITERATION_LIMIT,
        duals=_split_duals(prog, z),
        r_prim=r_prim,
        r_dual=r_dual,
        r_gap=r_gap,
        obj=prog.objective(x),
        iterations=res.iterations,
        backend_status=backend,
        layout=prog.layout,
    )


def epigraph_form(prog: ConicProgram) -> ConicProgram:
    """Reformulate the quadratic objective as an SOC epigraph (linear objective).

    Adds one variable t with x^T P x <= t via ||(2 L^T x, t - 1)|| <= t + 1 and
    minimizes 0.5 t + q^T x. Used as a fallback for linear-objective backends
    and as a cross-check of the native quadratic path.
    """
    Pd = prog.P.toarray()
    scale = max(1.0, np.abs(Pd).max())
    L = np.linalg.cholesky(Pd + 1e-12 * scale * np.eye(prog.n)).T  # upper: P ~= L^T L
    n = prog.n
    ext = lambda M: np.hstack([M, np.zeros((M.shape[0], 1))])
    socs = [SocRow(G=ext(r.G), h=r.h, c=np.concatenate([r.c, [0.0]]), d=r.d) for r in prog.socs]
    Gq = np.hstack([2.0 * L, np.zeros((n, 1))])
    Gq = np.vstack([Gq, np.concatenate([np.zeros(n), [1.0]])])
    hq = np.concatenate([np.zeros(n), [-1.0]])
    cq = np.concatenate([np.zeros(n), [1.0]])
    socs.append(SocRow(G=Gq, h=hq, c=cq, d=1.0))
    layout = dict(prog.layout)
    layout["epigraph_t"] = slice(n, n + 1)
    return ConicProgram(
        P=None,
        q=np.concatenate([prog.q, [0.5]]),
        A_eq=ext(prog.A_eq) if prog.n_eq else None,
        b_eq=prog.b_eq if prog.n_eq else None,
        A_in=ext(prog.A_in) if prog.n_in else None,
        b_in=prog.b_in if prog.n_in else None,
        socs=socs,
        layout=layout,
    )
