"""Closed-loop Monte-Carlo simulation of the affine policy on the true dynamics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .lintraj import PolicyMatrix, StackedBlocks, response_matrix
from .models import DynamicsModel, ModelDomainError, NominalTrajectory
from .uncertainty import UncertaintySet


@dataclass(frozen=True)
class Policy:
    """Affine disturbance-feedback policy u_k = u_bar_k + K_k d_{k-1}."""

    u_bar: np.ndarray   # (T, n_u)
    gains: np.ndarray   # (T, n_u, n_x)
    nominal: NominalTrajectory

    @property
    def horizon(self) -> int:
        return self.u_bar.shape[0]

    def policy_matrix(self) -> PolicyMatrix:
        return PolicyMatrix(self.gains)

    def to_dict(self) -> dict:
        return {
            "u_bar": self.u_bar.tolist(),
            "gains": self.gains.tolist(),
            "nominal_states": self.nominal.states.tolist(),
        }


@dataclass
class RolloutRecord:
    """One realized closed-loop trajectory under a single disturbance draw."""

    states: np.ndarray    # (T+1, n_x)
    controls: np.ndarray  # (T, n_u)
    zeta: np.ndarray      # ((T+1)*n_x,)
    g_values: np.ndarray | None = None   # (n_g,) filled by evaluate_satisfaction
    lin_errors: np.ndarray | None = None  # (T+1, n_x) filled by error collection

    def reconstructed_disturbances(self, model: DynamicsModel, x_bar0) -> np.ndarray:
        """Disturbances recovered from observations, block k = d_{k-1}."""
        T = self.controls.shape[0]
        d = np.empty((T + 1, model.n_x))
        d[0] = self.states[0] - np.asarray(x_bar0, dtype=float)
        for k in range(T):
            d[k + 1] = self.states[k + 1] - model.step(self.states[k], self.controls[k])
        return d


def simulate_closed_loop(model: DynamicsModel, policy: Policy, zeta: np.ndarray,
                         x_bar0: np.ndarray) -> RolloutRecord:
    """Roll the true nonlinear system under the policy for one disturbance draw.

    x_0 = x_bar0 + d_bar0 and u_k = u_bar_k + K_k d_{k-1}, where the fed-back
    disturbance is reconstructed from observations (identical to the injected
    value up to roundoff).
    """
    T = policy.horizon
    n_x = model.n_x
    zeta = np.asarray(zeta, dtype=float).reshape(-1)
    if zeta.shape[0] != (T + 1) * n_x:
        raise ValueError(f"zeta length {zeta.shape[0]} != {(T + 1) * n_x}")
    x_bar0 = np.asarray(x_bar0, dtype=float)
    states = np.empty((T + 1, n_x))
    controls = np.empty((T, model.n_u))
    states[0] = x_bar0 + zeta[:n_x]
    d_prev = states[0] - x_bar0
    for k in range(T):
        controls[k] = policy.u_bar[k] + policy.gains[k] @ d_prev
        try:
            fx = model.step(states[k], controls[k])
        except ModelDomainError as err:
            raise ModelDomainError(str(err), step=k) from err
        states[k + 1] = fx + zeta[(k + 1) * n_x : (k + 2) * n_x]
        d_prev = states[k + 1] - fx
    return RolloutRecord(states=states, controls=controls, zeta=zeta.copy())


def sample_zetas(uset: UncertaintySet, n_samples: int, master_seed: int,
                 boundary: bool = False) -> np.ndarray:
    """Disturbance draws from per-sample substreams keyed by (seed, index).

    The substream scheme makes the draw for sample i independent of how many
    samples run or in what order, so parallel execution cannot change results.
    """
    zetas = np.empty((n_samples, uset.dim))
    for i in range(n_samples):
        rng = np.random.default_rng(np.random.SeedSequence([master_seed, i]))
        zetas[i] = uset.sample(rng, 1, boundary=boundary)[0]
    return zetas


def simulate_batch(model: DynamicsModel, policy: Policy, zetas: np.ndarray,
                   x_bar0) -> list[RolloutRecord]:
    """Simulate many draws; numba kernel when available, python loop otherwise."""
    zetas = np.atleast_2d(np.asarray(zetas, dtype=float))
    x_bar0 = np.asarray(x_bar0, dtype=float)
    kernel = _kernels.kernel_for(model)
    if kernel is not None and _kernels.numba_enabled():
        states, controls = _kernels.run_kernel(
            kernel, model, x_bar0, policy.u_bar, policy.gains, zetas)
        return [RolloutRecord(states=states[i], controls=controls[i], zeta=zetas[i])
                for i in range(zetas.shape[0])]
    return [simulate_closed_loop(model, policy, z, x_bar0) for z in zetas]


def run_rollouts(model: DynamicsModel, policy: Policy, uset: UncertaintySet,
                 n_samples: int, master_seed: int,
                 boundary: bool = False) -> list[RolloutRecord]:
    """Sample disturbances and simulate the closed loop for each."""
    zetas = sample_zetas(uset, n_samples, master_seed, boundary=boundary)
    return simulate_batch(model, policy, zetas, policy.nominal.states[0])


def collect_linearization_errors(model: DynamicsModel, policy: Policy,
                                 blocks: StackedBlocks,
                                 zetas: np.ndarray) -> list[np.ndarray]:
    """Per-timestep gaps between realized states and the compact linear prediction.

    x^e_k = x_k - x_bar_k - [(Fu K + Fzeta) zeta]_k, collected per k for the
    error-ellipsoid fit. Rollout records get their lin_errors field populated
    as a side product when callers keep them.
    """
    zetas = np.atleast_2d(np.asarray(zetas, dtype=float))
    records = simulate_batch(model, policy, zetas, policy.nominal.states[0])
    H = response_matrix(blocks, policy.policy_matrix())
    predicted = zetas @ H.T  # (n, (T+1)*n_x)
    T = policy.horizon
    n_x = model.n_x
    realized = np.stack([r.states for r in records])  # (n, T+1, n_x)
    errors = realized - policy.nominal.states[None, :, :] - predicted.reshape(-1, T + 1, n_x)
    for i, rec in enumerate(records):
        rec.lin_errors = errors[i]
    return [errors[:, k, :].copy() for k in range(T + 1)]


@dataclass
class SatisfactionReport:
    """Constraint-satisfaction statistics over a set of rollouts."""

    n_samples: int
    n_satisfied: int
    labels: list[str]
    violation_counts: np.ndarray  # (n_g,) rollouts violating each row
    worst_margins: np.ndarray     # (n_g,) max row value over rollouts
    worst_violation: float        # max positive row value overall (0 if none)
    tol: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def satisfaction(self) -> float:
        return self.n_satisfied / self.n_samples

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_satisfied": self.n_satisfied,
            "satisfaction": self.satisfaction,
            "tol": self.tol,
            "worst_violation": self.worst_violation,
            "rows": {
                "labels": self.labels,
                "violation_counts": [int(c) for c in self.violation_counts],
                "worst_margins": [float(m) for m in self.worst_margins],
            },
            **self.extra,
        }


def evaluate_satisfaction(records: list[RolloutRecord], cs,
                          tol: float = 0.0) -> SatisfactionReport:
    """Fraction of rollouts with every row <= tol, plus per-row diagnostics."""
    if not records:
        raise ValueError("need at least one rollout record")
    n_g = cs.n_g
    counts = np.zeros(n_g, dtype=int)
    worst = np.full(n_g, -np.inf)
    n_sat = 0
    for rec in records:
        g = cs.evaluate(rec.states)
        rec.g_values = g
        counts += g > tol
        np.maximum(worst, g, out=worst)
        n_sat += bool(np.all(g <= tol))
    return SatisfactionReport(
        n_samples=len(records),
        n_satisfied=n_sat,
        labels=cs.labels(),
        violation_counts=counts,
        worst_margins=worst,
        worst_violation=float(max(0.0, worst.max())) if n_g else 0.0,
        tol=tol,
    )
