"""Discrete-time nonlinear dynamics models with analytic Jacobians."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ModelError(ValueError):
    """Invalid argument to a model function (dimension mismatch etc.)."""


class ModelDomainError(ModelError):
    """Dynamics undefined at the given point (square root / arcsin out of domain)."""

    def __init__(self, msg: str, step: int | None = None):
        self.step = step
        if step is not None:
            msg = f"timestep {step}: {msg}"
        super().__init__(msg)


@dataclass(frozen=True)
class NominalTrajectory:
    """Disturbance-free rollout: states[k+1] = f(states[k], controls[k])."""

    states: np.ndarray    # (T+1, n_x)
    controls: np.ndarray  # (T, n_u)

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]

    def stacked_states(self) -> np.ndarray:
        """Flattened (T+1)*n_x state vector."""
        return self.states.reshape(-1)


class DynamicsModel:
    """Base class: pure step/jacobians functions of (x, u)."""

    name = "base"

    def __init__(self, n_x: int, n_u: int, dt: float, params: dict | None = None):
        if n_x < 1 or n_u < 1:
            raise ModelError(f"need n_x >= 1 and n_u >= 1, got ({n_x}, {n_u})")
        if not dt > 0:
            raise ModelError(f"need dt > 0, got {dt}")
        self.n_x = int(n_x)
        self.n_u = int(n_u)
        self.dt = float(dt)
        self.params = dict(params or {})

    def _check(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.shape != (self.n_x,):
            raise ModelError(f"state shape {x.shape} != ({self.n_x},)")
        if u.shape != (self.n_u,):
            raise ModelError(f"control shape {u.shape} != ({self.n_u},)")
        return x, u

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """One step of the discrete dynamics f(x, u)."""
        x, u = self._check(x, u)
        return self._step(x, u)

    def jacobians(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(A, B) = (df/dx, df/du) at (x, u)."""
        x, u = self._check(x, u)
        return self._jacobians(x, u)

    def _step(self, x, u):  # pragma: no cover - abstract
        raise NotImplementedError

    def _jacobians(self, x, u):  # pragma: no cover - abstract
        raise NotImplementedError


class Unicycle(DynamicsModel):
    """Planar unicycle, state (x, y, theta), controls (v, omega)."""

    name = "unicycle"

    def __init__(self, dt: float, params: dict | None = None):
        super().__init__(3, 2, dt, params)

    def _step(self, x, u):
        px, py, th = x
        v, om = u
        dt = self.dt
        return np.array([
            px + v * np.cos(th) * dt,
            py + v * np.sin(th) * dt,
            th + om * dt,
        ])

    def _jacobians(self, x, u):
        _, _, th = x
        v, _ = u
        dt = self.dt
        c, s = np.cos(th), np.sin(th)
        A = np.array([
            [1.0, 0.0, -v * s * dt],
            [0.0, 1.0, v * c * dt],
            [0.0, 0.0, 1.0],
        ])
        B = np.array([
            [c * dt, 0.0],
            [s * dt, 0.0],
            [0.0, dt],
        ])
        return A, B


class Car(DynamicsModel):
    """Kinematic car, state (x, y, theta, v), controls (omega, a).

    (x, y) is the rear-axle midpoint, theta the heading, v the front-wheel speed;
    omega is the front-wheel steering angle, a its acceleration. `c_len` is the
    axle separation. The rear-wheel rolling distance uses the sign-corrected
    formula by default (reduces to the front rolling distance as omega -> 0);
    params["formula"] = "paper_verbatim" selects the printed plus-sign variant.
    """

    name = "car"

    def __init__(self, dt: float, params: dict | None = None):
        super().__init__(4, 2, dt, params)
        self.c_len = float(self.params.get("c_len", 0.75))
        if self.c_len <= 0:
            raise ModelError(f"need c_len > 0, got {self.c_len}")
        formula = self.params.get("formula", "corrected")
        if formula not in ("corrected", "paper_verbatim"):
            raise ModelError(f"unknown car formula {formula!r}")
        self._sqrt_sign = 1.0 if formula == "paper_verbatim" else -1.0

    def _rolling(self, v: float, om: float) -> tuple[float, float, float]:
        """Back-wheel rolling distance c_b and its (dc_b/dv, dc_b/dom)."""
        cf = v * self.dt
        g = cf * np.cos(om)
        rad = self.c_len**2 - g * g
        if rad <= 0:
            raise ModelDomainError(
                f"car rolling distance undefined: |v*dt*cos(omega)| = {abs(g):.6g} "
                f">= c_len = {self.c_len:.6g}"
            )
        s = np.sqrt(rad)
        cb = g + self.c_len + self._sqrt_sign * s
        dcb_dg = 1.0 - self._sqrt_sign * g / s
        return cb, dcb_dg * self.dt * np.cos(om), dcb_dg * (-cf * np.sin(om))

    def _heading_rate(self, v: float, om: float) -> tuple[float, float, float]:
        """arcsin(sin(om) * c_f / c_len) and its (d/dv, d/dom)."""
        cf = v * self.dt
        r = np.sin(om) * cf / self.c_len
        if abs(r) >= 1.0:
            raise ModelDomainError(
                f"car heading update undefined: |sin(omega)*v*dt/c_len| = {abs(r):.6g} >= 1"
            )
        dth = np.arcsin(r)
        den = np.sqrt(1.0 - r * r)
        d_dv = (np.sin(om) * self.dt / self.c_len) / den
        d_dom = (np.cos(om) * cf / self.c_len) / den
        return dth, d_dv, d_dom

    def _step(self, x, u):
        px, py, th, v = x
        om, a = u
        cb, _, _ = self._rolling(v, om)
        dth, _, _ = self._heading_rate(v, om)
        return np.array([
            px + cb * np.cos(th),
            py + cb * np.sin(th),
            th + dth,
            v + a * self.dt,
        ])

    def _jacobians(self, x, u):
        _, _, th, v = x
        om, _ = u
        cb, dcb_dv, dcb_dom = self._rolling(v, om)
        _, dth_dv, dth_dom = self._heading_rate(v, om)
        c, s = np.cos(th), np.sin(th)
        A = np.array([
            [1.0, 0.0, -cb * s, dcb_dv * c],
            [0.0, 1.0, cb * c, dcb_dv * s],
            [0.0, 0.0, 1.0, dth_dv],
            [0.0, 0.0, 0.0, 1.0],
        ])
        B = np.array([
            [dcb_dom * c, 0.0],
            [dcb_dom * s, 0.0],
            [dth_dom, 0.0],
            [0.0, self.dt],
        ])
        return A, B


class LinearModel(DynamicsModel):
    """Exactly linear dynamics x' = A x + B u (linearization is exact)."""

    name = "linear"

    def __init__(self, dt: float, params: dict):
        A = np.asarray(params["A"], dtype=float)
        B = np.asarray(params["B"], dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ModelError(f"inconsistent linear system shapes {A.shape}, {B.shape}")
        super().__init__(A.shape[0], B.shape[1], dt, params)
        self.A = A
        self.B = B

    def _step(self, x, u):
        return self.A @ x + self.B @ u

    def _jacobians(self, x, u):
        return self.A.copy(), self.B.copy()


class DoubleIntegrator(LinearModel):
    """Planar double integrator, state (px, py, vx, vy), controls (ax, ay)."""

    name = "double_integrator"

    def __init__(self, dt: float, params: dict | None = None):
        A = np.eye(4)
        A[0, 2] = A[1, 3] = dt
        B = np.zeros((4, 2))
        B[0, 0] = B[1, 1] = 0.5 * dt * dt
        B[2, 0] = B[3, 1] = dt
        merged = dict(params or {})
        merged.update(A=A.tolist(), B=B.tolist())
        super().__init__(dt, merged)


MODEL_REGISTRY: dict[str, type[DynamicsModel]] = {
    "unicycle": Unicycle,
    "car": Car,
    "linear": LinearModel,
    "double_integrator": DoubleIntegrator,
}


def make_model(name: str, dt: float, params: dict | None = None) -> DynamicsModel:
    """Instantiate a registered model by name."""
    try:
        cls = MODEL_REGISTRY[name]
    except KeyError:
        raise ModelError(
            f"unknown model {name!r}; registered: {sorted(MODEL_REGISTRY)}"
        ) from None
    return cls(dt, params)


def rollout(model: DynamicsModel, x0: np.ndarray, controls: np.ndarray) -> NominalTrajectory:
    """Disturbance-free rollout of `controls` (T, n_u) from x0."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    T = controls.shape[0]
    if T < 1 or controls.shape[1] != model.n_u:
        raise ModelError(f"controls shape {controls.shape} invalid for n_u={model.n_u}")
    x0 = np.asarray(x0, dtype=float)
    states = np.empty((T + 1, model.n_x))
    states[0] = x0
    for k in range(T):
        try:
            states[k + 1] = model.step(states[k], controls[k])
        except ModelDomainError as err:
            raise ModelDomainError(str(err), step=k) from err
    return NominalTrajectory(states=states, controls=controls.copy())


def linearize_along(model: DynamicsModel, nominal: NominalTrajectory) -> tuple[np.ndarray, np.ndarray]:
    """Per-step Jacobians (A_list, B_list) along a nominal trajectory."""
    T = nominal.horizon
    A_list = np.empty((T, model.n_x, model.n_x))
    B_list = np.empty((T, model.n_x, model.n_u))
    for k in range(T):
        try:
            A_list[k], B_list[k] = model.jacobians(nominal.states[k], nominal.controls[k])
        except ModelDomainError as err:
            raise ModelDomainError(str(err), step=k) from err
    return A_list, B_list
