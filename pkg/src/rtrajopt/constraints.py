"""State-constraint library: obstacle/box rows, linearization, robust margins."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lintraj import PolicyMatrix, StackedBlocks
from .models import DynamicsModel, NominalTrajectory
from .uncertainty import ErrorEllipsoid, UncertaintySet, error_support


@dataclass(frozen=True)
class CircularObstacle:
    """Keep-out disk in the (pos_idx) plane: r^2 - ||pos_k - center||^2 <= 0."""

    center: tuple[float, float]
    radius: float
    steps: tuple[int, ...] | None = None  # None -> every timestep 0..T
    pos_idx: tuple[int, int] = (0, 1)


@dataclass(frozen=True)
class BoxFace:
    """Single-face bound on one state component at one timestep.

    side=+1 encodes x_k[dim] <= bound, side=-1 encodes x_k[dim] >= bound.
    """

    dim: int
    bound: float
    side: int
    step: int


@dataclass(frozen=True)
class LinearStateRow:
    """General scalar row coeffs . x_k - offset <= 0 at one timestep."""

    step: int
    coeffs: tuple[float, ...]
    offset: float


@dataclass(frozen=True)
class ControlBounds:
    """Per-step box on the controls, applied directly (never robustified)."""

    lo: np.ndarray  # (T, n_u)
    hi: np.ndarray  # (T, n_u)

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("control bounds need lo <= hi of matching shape")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def uniform(cls, lo, hi, T: int, n_u: int) -> "ControlBounds":
        return cls(np.broadcast_to(np.asarray(lo, float), (T, n_u)).copy(),
                   np.broadcast_to(np.asarray(hi, float), (T, n_u)).copy())


@dataclass(frozen=True)
class RowInfo:
    kind: str    # "obstacle" | "face" | "linear"
    step: int
    label: str
    params: dict = field(default_factory=dict)


class ConstraintSet:
    """Scalar constraint rows over the stacked state, with analytic gradients.

    Rows are materialized in a fixed order: obstacles (declaration order, then
    ascending timestep), box faces, then linear rows. Row j of every report
    array refers to this order.
    """

    def __init__(self, T: int, n_x: int,
                 obstacles: list[CircularObstacle] | None = None,
                 faces: list[BoxFace] | None = None,
                 linear_rows: list[LinearStateRow] | None = None,
                 control_bounds: ControlBounds | None = None):
        self.T = int(T)
        self.n_x = int(n_x)
        self.obstacles = list(obstacles or [])
        self.faces = list(faces or [])
        self.linear_rows = list(linear_rows or [])
        self.control_bounds = control_bounds
        self.rows: list[RowInfo] = []
        for i, ob in enumerate(self.obstacles):
            steps = ob.steps if ob.steps is not None else tuple(range(self.T + 1))
            for k in steps:
                if not 0 <= k <= self.T:
                    raise ValueError(f"obstacle {i} step {k} outside 0..{self.T}")
                self.rows.append(RowInfo("obstacle", k, f"obs{i}[k={k}]",
                                         {"index": i, "center": ob.center,
                                          "radius": ob.radius, "pos_idx": ob.pos_idx}))
        for i, f in enumerate(self.faces):
            if not 0 <= f.step <= self.T or not 0 <= f.dim < self.n_x:
                raise ValueError(f"face {i} out of range: step {f.step}, dim {f.dim}")
            if f.side not in (-1, 1):
                raise ValueError(f"face {i} side must be +1 or -1, got {f.side}")
            self.rows.append(RowInfo("face", f.step, f"face{i}",
                                     {"index": i, "dim": f.dim, "bound": f.bound,
                                      "side": f.side}))
        for i, lr in enumerate(self.linear_rows):
            if not 0 <= lr.step <= self.T or len(lr.coeffs) != self.n_x:
                raise ValueError(f"linear row {i} inconsistent with T={self.T}, n_x={self.n_x}")
            self.rows.append(RowInfo("linear", lr.step, f"lin{i}",
                                     {"index": i, "coeffs": lr.coeffs, "offset": lr.offset}))

    @property
    def n_g(self) -> int:
        return len(self.rows)

    def labels(self) -> list[str]:
        return [r.label for r in self.rows]

    def _states(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(self.T + 1, self.n_x)
        if x.shape != (self.T + 1, self.n_x):
            raise ValueError(f"stacked state shape {x.shape} != ({self.T + 1}, {self.n_x})")
        return x

    def evaluate(self, x) -> np.ndarray:
        """Exact nonlinear row values at the stacked state; <= 0 means satisfied."""
        X = self._states(x)
        g = np.empty(self.n_g)
        for j, row in enumerate(self.rows):
            xk = X[row.step]
            if row.kind == "obstacle":
                i0, i1 = row.params["pos_idx"]
                cx, cy = row.params["center"]
                dx, dy = xk[i0] - cx, xk[i1] - cy
                g[j] = row.params["radius"] ** 2 - (dx * dx + dy * dy)
            elif row.kind == "face":
                g[j] = row.params["side"] * (xk[row.params["dim"]] - row.params["bound"])
            else:
                g[j] = float(np.dot(row.params["coeffs"], xk)) - row.params["offset"]
        return g

    def gradient_rows(self, x) -> np.ndarray:
        """Analytic per-timestep gradient slices, shape (n_g, T+1, n_x)."""
        X = self._states(x)
        grad = np.zeros((self.n_g, self.T + 1, self.n_x))
        for j, row in enumerate(self.rows):
            xk = X[row.step]
            if row.kind == "obstacle":
                i0, i1 = row.params["pos_idx"]
                cx, cy = row.params["center"]
                grad[j, row.step, i0] = -2.0 * (xk[i0] - cx)
                grad[j, row.step, i1] = -2.0 * (xk[i1] - cy)
            elif row.kind == "face":
                grad[j, row.step, row.params["dim"]] = float(row.params["side"])
            else:
                grad[j, row.step] = row.params["coeffs"]
        return grad


@dataclass(frozen=True)
class LinearizedConstraintData:
    """Rows linearized at one nominal trajectory (rebuilt every outer iteration)."""

    g_hat: np.ndarray    # (n_g,)
    grad: np.ndarray     # (n_g, T+1, n_x) per-timestep gradient slices
    J_u: np.ndarray      # (n_g, T*n_u) = grad . Fu
    J_zeta: np.ndarray   # (n_g, (T+1)*n_x) = grad . Fzeta

    @property
    def n_g(self) -> int:
        return self.g_hat.shape[0]


def linearize(cs: ConstraintSet, nominal: NominalTrajectory,
              blocks: StackedBlocks) -> LinearizedConstraintData:
    """First-order row data at the nominal trajectory the blocks were built at."""
    g_hat = cs.evaluate(nominal.states)
    grad = cs.gradient_rows(nominal.states)
    flat = grad.reshape(cs.n_g, (cs.T + 1) * cs.n_x)
    return LinearizedConstraintData(g_hat=g_hat, grad=grad,
                                    J_u=flat @ blocks.Fu, J_zeta=flat @ blocks.Fzeta)


def tractable_row(j: int, data: LinearizedConstraintData, uset: UncertaintySet,
                  K: PolicyMatrix) -> float:
    """Worst-case disturbance term of row j: support of (Fu K + Fzeta)^T grad_j."""
    direction = K.apply_transpose(data.J_u[j]) + data.J_zeta[j]
    return uset.support(direction)


def robust_margin_le(j: int, data: LinearizedConstraintData, uset: UncertaintySet,
                     K: PolicyMatrix,
                     error_sets: list[ErrorEllipsoid] | None = None) -> float:
    """Row j's robust margin; adds the linearization-error support when present."""
    margin = tractable_row(j, data, uset, K)
    if error_sets is not None:
        margin += error_support(error_sets, data.grad[j])
    return margin


def check_robust_sampled(cs: ConstraintSet, model: DynamicsModel, policy,
                         uset: UncertaintySet, n_samples: int, seed: int,
                         boundary: bool = False):
    """Monte-Carlo audit of the true nonlinear closed loop against the rows."""
    from . import monte  # deferred: monte consumes ConstraintSet duck-typed

    records = monte.run_rollouts(model, policy, uset, n_samples, seed, boundary=boundary)
    return monte.evaluate_satisfaction(records, cs)
