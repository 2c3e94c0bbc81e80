"""Ellipsoidal uncertainty sets over the stacked disturbance and per-step error sets."""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular


def _check_spd(S: np.ndarray, what: str) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"{what} must be square, got shape {S.shape}")
    if not np.allclose(S, S.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(S).max())):
        raise ValueError(f"{what} must be symmetric")
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise ValueError(f"{what} must be positive definite (Cholesky failed)") from None
    return L


class UncertaintySet:
    """Bounded ellipsoid of stacked disturbances: zeta = Gamma z, z^T S z <= tau.

    Weighted norms are evaluated through the cached Cholesky factor of S
    (triangular solves, never an explicit inverse).
    """

    def __init__(self, Gamma: np.ndarray, S: np.ndarray, tau: float):
        self.Gamma = np.asarray(Gamma, dtype=float)
        if self.Gamma.ndim != 2:
            raise ValueError(f"Gamma must be a matrix, got shape {self.Gamma.shape}")
        self.S = np.asarray(S, dtype=float)
        self.chol_S = _check_spd(self.S, "S")
        if self.S.shape[0] != self.Gamma.shape[1]:
            raise ValueError(
                f"S shape {self.S.shape} inconsistent with Gamma columns {self.Gamma.shape[1]}"
            )
        if tau < 0:
            raise ValueError(f"need tau >= 0, got {tau}")
        self.tau = float(tau)

    @property
    def dim(self) -> int:
        """Dimension of the stacked disturbance zeta."""
        return self.Gamma.shape[0]

    @property
    def n_z(self) -> int:
        return self.Gamma.shape[1]

    def with_tau(self, tau: float) -> "UncertaintySet":
        return UncertaintySet(self.Gamma, self.S, tau)

    def support(self, c: np.ndarray) -> float:
        """max over zeta in the set of c^T zeta = sqrt(tau) * ||Gamma^T c||_{S^-1}."""
        c = np.asarray(c, dtype=float)
        if c.shape != (self.dim,):
            raise ValueError(f"direction shape {c.shape} != ({self.dim},)")
        w = self.Gamma.T @ c
        y = solve_triangular(self.chol_S, w, lower=True)
        return float(np.sqrt(self.tau) * np.linalg.norm(y))

    def support_many(self, C: np.ndarray) -> np.ndarray:
        """Support values for many directions at once, C of shape (m, dim)."""
        C = np.asarray(C, dtype=float)
        W = C @ self.Gamma
        Y = solve_triangular(self.chol_S, W.T, lower=True)
        return np.sqrt(self.tau) * np.linalg.norm(Y, axis=0)

    def sample_z(self, rng: np.random.Generator, n: int, boundary: bool = False) -> np.ndarray:
        """Sample z with z^T S z <= tau (uniform in volume) or = tau (boundary)."""
        if n < 1:
            raise ValueError(f"need n >= 1, got {n}")
        if self.tau == 0.0:
            return np.zeros((n, self.n_z))
        w = rng.standard_normal((n, self.n_z))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        # z0 = L^-T w lies on the boundary of z^T S z = 1 up to rounding;
        # renormalize in the S metric so the boundary holds to ~machine precision.
        z0 = solve_triangular(self.chol_S.T, w.T, lower=False).T
        q = np.einsum("ij,jk,ik->i", z0, self.S, z0)
        z = z0 * np.sqrt(self.tau / q)[:, None]
        if not boundary:
            r = rng.random(n) ** (1.0 / self.n_z)
            z *= r[:, None]
        return z

    def sample(self, rng: np.random.Generator, n: int, boundary: bool = False) -> np.ndarray:
        """n stacked-disturbance samples zeta = Gamma z, shape (n, dim)."""
        return self.sample_z(rng, n, boundary=boundary) @ self.Gamma.T


class ErrorEllipsoid:
    """Per-timestep linearization-error set: (x - center)^T shape (x - center) <= level."""

    def __init__(self, center: np.ndarray, shape: np.ndarray, level: float):
        self.center = np.asarray(center, dtype=float)
        self.shape = np.asarray(shape, dtype=float)
        self._chol = _check_spd(self.shape, "shape")
        if self.center.shape != (self.shape.shape[0],):
            raise ValueError(
                f"center shape {self.center.shape} inconsistent with shape {self.shape.shape}"
            )
        if level < 0:
            raise ValueError(f"need level >= 0, got {level}")
        self.level = float(level)

    def support(self, grad: np.ndarray) -> float:
        """max over members of grad^T x = grad^T center + sqrt(level)*||grad||_{shape^-1}."""
        grad = np.asarray(grad, dtype=float)
        y = solve_triangular(self._chol, grad, lower=True)
        return float(grad @ self.center + np.sqrt(self.level) * np.linalg.norm(y))

    def membership_residual(self, x: np.ndarray) -> float:
        d = np.asarray(x, dtype=float) - self.center
        return float(d @ self.shape @ d)

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        return self.membership_residual(x) <= self.level + tol

    def to_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "shape": self.shape.tolist(),
            "level": self.level,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorEllipsoid":
        return cls(np.asarray(d["center"]), np.asarray(d["shape"]), float(d["level"]))


def fit_error_ellipsoids(samples, inflation: float = 1.1) -> list[ErrorEllipsoid]:
    """Fit one ellipsoid per timestep from error-sample clouds.

    center = sample mean; shape = inverse of (sample covariance + eps*I) with a
    trace-scaled eps = 1e-9 * max(1, trace/n); level = inflation * worst
    membership residual, so every input sample is inside when inflation >= 1.
    """
    if inflation < 1.0:
        raise ValueError(f"need inflation >= 1, got {inflation}")
    out = []
    for k, cloud in enumerate(samples):
        X = np.asarray(cloud, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"timestep {k}: samples must be 2-D, got shape {X.shape}")
        m, n = X.shape
        if m < n + 1:
            raise ValueError(f"timestep {k}: need at least n_x+1 = {n + 1} samples, got {m}")
        center = X.mean(axis=0)
        D = X - center
        cov = (D.T @ D) / (m - 1)
        eps = 1e-9 * max(1.0, np.trace(cov) / n)
        cov_reg = cov + eps * np.eye(n)
        L = np.linalg.cholesky(cov_reg)
        inv = solve_triangular(L.T, solve_triangular(L, np.eye(n), lower=True), lower=False)
        shape = 0.5 * (inv + inv.T)
        resid = np.einsum("ij,jk,ik->i", D, shape, D)
        level = float(inflation * resid.max())
        out.append(ErrorEllipsoid(center, shape, level))
    return out


def error_support(ellipsoids, grad_slices) -> float:
    """Worst-case sum over timesteps of grad_k^T x^e_k with x^e_k in its ellipsoid."""
    grad_slices = np.asarray(grad_slices, dtype=float)
    if len(ellipsoids) != grad_slices.shape[0]:
        raise ValueError(
            f"{len(ellipsoids)} ellipsoids vs {grad_slices.shape[0]} gradient slices"
        )
    return float(sum(e.support(g) for e, g in zip(ellipsoids, grad_slices)))
