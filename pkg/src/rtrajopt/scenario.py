"""Scenario files: schema-validated problem descriptions that pin a run exactly."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import sco
from .constraints import BoxFace, CircularObstacle, ConstraintSet, ControlBounds
from .models import DynamicsModel, make_model
from .uncertainty import UncertaintySet


class ScenarioError(ValueError):
    """Scenario file failed schema or semantic validation."""


def _schema() -> dict:
    text = resources.files("rtrajopt.schema").joinpath("scenario.schema.json").read_text()
    return json.loads(text)


_DEFAULTS = {
    "name": "unnamed",
    "description": "",
    "mode": "nrto",
    "cost": {"r_u": 1.0, "r_k": 1.0},
    "constraints": {"obstacles": [], "terminal_box": [], "control_bounds": None},
    "outer": {},
    "seeds": {"master": 0},
    "samples": {"validate": 1000, "error_fit": 1500},
    "error_inflation": 1.1,
    "u_init": "zeros",
}


@dataclass(frozen=True)
class Scenario:
    """Fully materialized problem description; (file, master seed) pins a run."""

    name: str
    description: str
    mode: str
    model_name: str
    dt: float
    T: int
    model_params: dict
    x0: tuple[float, ...]
    r_u: object
    r_k: object
    tau: float
    n_z: int
    gamma_seed: int | None
    gamma: list | None
    S: object  # "identity" or nested list
    obstacles: list[dict]
    terminal_box: list[dict]
    control_bounds: dict | None
    outer: dict
    master_seed: int
    n_validate: int
    n_error_fit: int
    error_inflation: float
    u_init: str

    # -- construction -----------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict) -> "Scenario":
        try:
            jsonschema.validate(raw, _schema())
        except jsonschema.ValidationError as err:
            path = "/".join(str(p) for p in err.absolute_path) or "<root>"
            raise ScenarioError(f"scenario field '{path}': {err.message}") from None
        d = {**_DEFAULTS, **raw}
        for key in ("cost", "constraints", "seeds", "samples"):
            d[key] = {**_DEFAULTS[key], **(raw.get(key) or {})}
        unc = d["uncertainty"]
        gamma = unc.get("gamma")
        n_z = unc.get("n_z", len(gamma[0]) if gamma else 4)
        if gamma is not None and len(gamma[0]) != n_z:
            raise ScenarioError(f"scenario field 'uncertainty/gamma': has {len(gamma[0])} "
                                f"columns but n_z = {n_z}")
        scn = cls(
            name=d["name"],
            description=d["description"],
            mode=d["mode"],
            model_name=d["model"]["name"],
            dt=float(d["model"]["dt"]),
            T=int(d["model"]["T"]),
            model_params=dict(d["model"].get("params") or {}),
            x0=tuple(float(v) for v in d["x0"]),
            r_u=d["cost"]["r_u"],
            r_k=d["cost"]["r_k"],
            tau=float(unc["tau"]),
            n_z=int(n_z),
            gamma_seed=unc.get("gamma_seed", 0) if gamma is None else None,
            gamma=gamma,
            S=unc.get("S", "identity"),
            obstacles=list(d["constraints"]["obstacles"]),
            terminal_box=list(d["constraints"]["terminal_box"]),
            control_bounds=d["constraints"]["control_bounds"],
            outer=dict(d["outer"]),
            master_seed=int(d["seeds"]["master"]),
            n_validate=int(d["samples"]["validate"]),
            n_error_fit=int(d["samples"]["error_fit"]),
            error_inflation=float(d["error_inflation"]),
            u_init=d["u_init"],
        )
        scn.validate_semantics()
        return scn

    def validate_semantics(self):
        model = self.build_model()
        if len(self.x0) != model.n_x:
            raise ScenarioError(f"scenario field 'x0': length {len(self.x0)} != "
                                f"model n_x = {model.n_x}")
        self.build_uncertainty()  # raises on S not PD etc.
        self.build_constraints()
        self.cost_arrays(model)
        self.outer_params(self.mode)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        unc = {"tau": self.tau, "n_z": self.n_z, "S": self.S}
        if self.gamma is not None:
            unc["gamma"] = self.gamma
        else:
            unc["gamma_seed"] = self.gamma_seed
        return {
            "name": self.name,
            "description": self.description,
            "mode": self.mode,
            "model": {"name": self.model_name, "dt": self.dt, "T": self.T,
                      "params": self.model_params},
            "x0": list(self.x0),
            "cost": {"r_u": self.r_u, "r_k": self.r_k},
            "uncertainty": unc,
            "constraints": {"obstacles": self.obstacles,
                            "terminal_box": self.terminal_box,
                            "control_bounds": self.control_bounds},
            "outer": self.outer,
            "seeds": {"master": self.master_seed},
            "samples": {"validate": self.n_validate, "error_fit": self.n_error_fit},
            "error_inflation": self.error_inflation,
            "u_init": self.u_init,
        }

    def with_overrides(self, **kwargs) -> "Scenario":
        d = self.to_dict()
        for key, value in kwargs.items():
            if key == "tau":
                d["uncertainty"]["tau"] = value
            elif key in d:
                d[key] = value
            else:
                raise KeyError(f"unknown scenario override {key!r}")
        return Scenario.from_dict(d)

    # -- builders ----------------------------------------------------------

    def build_model(self) -> DynamicsModel:
        return make_model(self.model_name, self.dt, self.model_params)

    def build_uncertainty(self, tau: float | None = None) -> UncertaintySet:
        model = self.build_model()
        dim = (self.T + 1) * model.n_x
        if self.gamma is not None:
            Gamma = np.asarray(self.gamma, dtype=float)
            if Gamma.shape != (dim, self.n_z):
                raise ScenarioError(f"scenario field 'uncertainty/gamma': shape "
                                    f"{Gamma.shape} != ({dim}, {self.n_z})")
        else:
            rng = np.random.default_rng(self.gamma_seed)
            Gamma = rng.uniform(-1.0, 1.0, size=(dim, self.n_z))
        S = np.eye(self.n_z) if isinstance(self.S, str) else np.asarray(self.S, dtype=float)
        try:
            return UncertaintySet(Gamma, S, self.tau if tau is None else tau)
        except ValueError as err:
            raise ScenarioError(f"scenario field 'uncertainty': {err}") from None

    def build_constraints(self) -> ConstraintSet:
        model = self.build_model()
        obstacles = [CircularObstacle(center=tuple(ob["center"]), radius=ob["radius"],
                                      steps=tuple(ob["steps"]) if ob.get("steps") else None,
                                      pos_idx=tuple(ob.get("pos_idx", (0, 1))))
                     for ob in self.obstacles]
        faces: list[BoxFace] = []
        for b in self.terminal_box:
            step = int(b.get("step", self.T))
            if "hi" in b:
                faces.append(BoxFace(dim=b["dim"], bound=float(b["hi"]), side=1, step=step))
            if "lo" in b:
                faces.append(BoxFace(dim=b["dim"], bound=float(b["lo"]), side=-1, step=step))
        bounds = None
        if self.control_bounds is not None:
            bounds = ControlBounds.uniform(self.control_bounds["lo"],
                                           self.control_bounds["hi"],
                                           self.T, model.n_u)
        try:
            return ConstraintSet(self.T, model.n_x, obstacles=obstacles, faces=faces,
                                 control_bounds=bounds)
        except ValueError as err:
            raise ScenarioError(f"scenario field 'constraints': {err}") from None

    def _weight_stack(self, w, n: int, what: str) -> np.ndarray:
        arr = np.asarray(w, dtype=float)
        if arr.ndim == 0:
            out = np.tile(float(arr) * np.eye(n), (self.T, 1, 1))
        elif arr.ndim == 1:
            if arr.shape[0] != self.T:
                raise ScenarioError(f"scenario field 'cost/{what}': per-step list "
                                    f"length {arr.shape[0]} != T = {self.T}")
            out = np.stack([v * np.eye(n) for v in arr])
        elif arr.ndim == 2:
            if arr.shape != (n, n):
                raise ScenarioError(f"scenario field 'cost/{what}': matrix shape "
                                    f"{arr.shape} != ({n}, {n})")
            out = np.tile(arr, (self.T, 1, 1))
        elif arr.ndim == 3:
            if arr.shape != (self.T, n, n):
                raise ScenarioError(f"scenario field 'cost/{what}': stack shape "
                                    f"{arr.shape} != ({self.T}, {n}, {n})")
            out = arr.copy()
        else:
            raise ScenarioError(f"scenario field 'cost/{what}': too many dimensions")
        return out

    def cost_arrays(self, model: DynamicsModel | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(R_u, R_K) as (T, n_u, n_u) weight stacks."""
        model = model or self.build_model()
        return (self._weight_stack(self.r_u, model.n_u, "r_u"),
                self._weight_stack(self.r_k, model.n_u, "r_k"))

    def outer_params(self, mode: str | None = None) -> "sco.OuterParams":
        try:
            return sco.OuterParams(mode=mode or self.mode, **self.outer)
        except (TypeError, ValueError) as err:
            raise ScenarioError(f"scenario field 'outer': {err}") from None

    def initial_controls(self, model: DynamicsModel | None = None) -> np.ndarray:
        """Feed-forward initialization: zeros, or a steer-to-goal heuristic."""
        model = model or self.build_model()
        u = np.zeros((self.T, model.n_u))
        if self.u_init == "zeros" or not self.terminal_box:
            return u
        target = np.asarray(self.x0, dtype=float).copy()
        for b in self.terminal_box:
            if "lo" in b and "hi" in b:
                target[b["dim"]] = 0.5 * (b["lo"] + b["hi"])
        delta = target[:2] - np.asarray(self.x0[:2])
        dist = float(np.hypot(*delta))
        total = self.T * self.dt
        if model.name == "unicycle":
            heading = np.arctan2(delta[1], delta[0])
            err = (heading - self.x0[2] + np.pi) % (2 * np.pi) - np.pi
            u[:, 0] = dist / total
            u[: self.T // 3, 1] = err / (self.T // 3 * self.dt)
        elif model.name == "car":
            v0 = self.x0[3]
            u[:, 1] = 2.0 * (dist - v0 * total) / total**2
        return u


def parse_scenario(path: str | Path) -> Scenario:
    """Load, schema-validate and materialize a scenario file."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ScenarioError(f"{path}:{err.lineno}: malformed JSON: {err.msg}") from None
    return Scenario.from_dict(raw)
