"""Batched closed-loop rollout kernels.

The per-sample nonlinear simulation is the hot inner loop of the Monte-Carlo
harness. Named models (unicycle, car) get numba-compiled kernels; every model
also has the pure numpy/python path in `monte`. Selection:

    RTRAJOPT_NUMBA=0|off|numpy   force the fallback path
    (default)                    use numba when importable

Both paths implement identical arithmetic: the controller feeds back the
disturbance reconstructed from observations, d_{k-1} = x_k - f(x_{k-1}, u_{k-1}).
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(f):
            return f
        return deco if not (args and callable(args[0])) else args[0]


def numba_enabled() -> bool:
    flag = os.environ.get("RTRAJOPT_NUMBA", "").strip().lower()
    if flag in ("0", "false", "off", "numpy"):
        return False
    return HAVE_NUMBA


@njit(cache=True)
def unicycle_closed_loop(x_bar0, u_bar, gains, zetas, dt, states, controls):
    """Simulate all samples of the unicycle under the affine policy."""
    n = zetas.shape[0]
    T = u_bar.shape[0]
    for s in range(n):
        d0 = zetas[s, 0]
        d1 = zetas[s, 1]
        d2 = zetas[s, 2]
        x0 = x_bar0[0] + d0
        x1 = x_bar0[1] + d1
        x2 = x_bar0[2] + d2
        states[s, 0, 0] = x0
        states[s, 0, 1] = x1
        states[s, 0, 2] = x2
        # reconstructed initial disturbance
        d0 = x0 - x_bar0[0]
        d1 = x1 - x_bar0[1]
        d2 = x2 - x_bar0[2]
        for k in range(T):
            v = u_bar[k, 0] + gains[k, 0, 0] * d0 + gains[k, 0, 1] * d1 + gains[k, 0, 2] * d2
            om = u_bar[k, 1] + gains[k, 1, 0] * d0 + gains[k, 1, 1] * d1 + gains[k, 1, 2] * d2
            controls[s, k, 0] = v
            controls[s, k, 1] = om
            f0 = x0 + v * np.cos(x2) * dt
            f1 = x1 + v * np.sin(x2) * dt
            f2 = x2 + om * dt
            base = (k + 1) * 3
            x0 = f0 + zetas[s, base]
            x1 = f1 + zetas[s, base + 1]
            x2 = f2 + zetas[s, base + 2]
            states[s, k + 1, 0] = x0
            states[s, k + 1, 1] = x1
            states[s, k + 1, 2] = x2
            d0 = x0 - f0
            d1 = x1 - f1
            d2 = x2 - f2
    return 0


@njit(cache=True)
def car_closed_loop(x_bar0, u_bar, gains, zetas, dt, c_len, sqrt_sign, states, controls):
    """Simulate all samples of the kinematic car under the affine policy.

    Returns the index of the first sample hitting a dynamics domain violation
    (sqrt/arcsin argument out of range), or -1 when all samples simulate.
    """
    n = zetas.shape[0]
    T = u_bar.shape[0]
    for s in range(n):
        d = np.empty(4)
        x = np.empty(4)
        for i in range(4):
            x[i] = x_bar0[i] + zetas[s, i]
            states[s, 0, i] = x[i]
            d[i] = x[i] - x_bar0[i]
        for k in range(T):
            om = u_bar[k, 0]
            a = u_bar[k, 1]
            for i in range(4):
                om += gains[k, 0, i] * d[i]
                a += gains[k, 1, i] * d[i]
            controls[s, k, 0] = om
            controls[s, k, 1] = a
            cf = x[3] * dt
            g = cf * np.cos(om)
            rad = c_len * c_len - g * g
            r = np.sin(om) * cf / c_len
            if rad <= 0.0 or np.abs(r) >= 1.0:
                return s
            cb = g + c_len + sqrt_sign * np.sqrt(rad)
            f0 = x[0] + cb * np.cos(x[2])
            f1 = x[1] + cb * np.sin(x[2])
            f2 = x[2] + np.arcsin(r)
            f3 = x[3] + a * dt
            base = (k + 1) * 4
            x[0] = f0 + zetas[s, base]
            x[1] = f1 + zetas[s, base + 1]
            x[2] = f2 + zetas[s, base + 2]
            x[3] = f3 + zetas[s, base + 3]
            d[0] = x[0] - f0
            d[1] = x[1] - f1
            d[2] = x[2] - f2
            d[3] = x[3] - f3
            for i in range(4):
                states[s, k + 1, i] = x[i]
    return -1


def kernel_for(model) -> str | None:
    """Kernel id for a model, or None when only the fallback path applies."""
    if model.name == "unicycle":
        return "unicycle"
    if model.name == "car":
        return "car"
    return None


def run_kernel(kernel: str, model, x_bar0, u_bar, gains, zetas):
    """Dispatch a batched kernel; returns (states, controls)."""
    n = zetas.shape[0]
    T = u_bar.shape[0]
    states = np.empty((n, T + 1, model.n_x))
    controls = np.empty((n, T, model.n_u))
    if kernel == "unicycle":
        unicycle_closed_loop(x_bar0, u_bar, gains, zetas, model.dt, states, controls)
    elif kernel == "car":
        bad = car_closed_loop(x_bar0, u_bar, gains, zetas, model.dt,
                              model.c_len, model._sqrt_sign, states, controls)
        if bad >= 0:
            from .models import ModelDomainError

            raise ModelDomainError(f"car dynamics left their domain in sample {bad}")
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    return states, controls
