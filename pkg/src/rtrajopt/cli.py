"""Command-line runner: solve -> validate (-> fit error sets -> re-solve) -> artifacts."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__, lintraj, models, monte, sco, uncertainty
from .inner_admm import InnerSolverError
from .scenario import Scenario, ScenarioError, parse_scenario

log = logging.getLogger("rtrajopt")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_GATE = 4

FLOAT_FMT = ".17g"  # fixed CSV float formatting for diff-stable outputs


def _atomic_write(path: Path, data: str):
    """Write via temp file + rename so a crash never leaves a truncated artifact."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: Path, obj):
    _atomic_write(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _fmt(x: float) -> str:
    return format(float(x), FLOAT_FMT)


def write_rollouts_csv(path: Path, records: list[monte.RolloutRecord], cs):
    """Long-format rollout dump; constraint columns carry the rows anchored at k.

    Columns: sample, k, state components, control components (blank at k = T),
    then one column per constraint row kind/index with the row's value on the
    line of its anchor timestep and blank elsewhere.
    """
    by_step: dict[int, list[int]] = {}
    for j, row in enumerate(cs.rows):
        by_step.setdefault(row.step, []).append(j)
    col_rows = sorted({(cs.rows[j].label.split("[")[0] if cs.rows[j].kind == "obstacle"
                        else cs.rows[j].label) for j in range(cs.n_g)})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if records:
        n_x = records[0].states.shape[1]
        n_u = records[0].controls.shape[1]
        T = records[0].controls.shape[0]
    w.writerow(["sample", "k"] + [f"x{i}" for i in range(n_x)]
               + [f"u{i}" for i in range(n_u)] + col_rows)
    col_of = {label: i for i, label in enumerate(col_rows)}
    for s, rec in enumerate(records):
        for k in range(T + 1):
            cells = [str(s), str(k)]
            cells += [_fmt(v) for v in rec.states[k]]
            cells += [_fmt(v) for v in rec.controls[k]] if k < T else [""] * n_u
            gcols = [""] * len(col_rows)
            if rec.g_values is not None:
                for j in by_step.get(k, []):
                    row = cs.rows[j]
                    label = row.label.split("[")[0] if row.kind == "obstacle" else row.label
                    gcols[col_of[label]] = _fmt(rec.g_values[j])
            w.writerow(cells + gcols)
    _atomic_write(path, buf.getvalue())


def _solve_or_exit(scenario: Scenario, mode: str, error_sets=None, dump_hook=None):
    try:
        return sco.optimize(scenario, mode=mode, error_sets=error_sets, dump_hook=dump_hook)
    except (InnerSolverError, models.ModelDomainError) as err:
        raise PipelineError(f"solver failure in mode {mode}: {err}") from err


class PipelineError(RuntimeError):
    pass


def _validate(scenario: Scenario, policy: monte.Policy, cs, n_samples: int,
              seed: int, boundary: bool) -> tuple[list, monte.SatisfactionReport]:
    model = scenario.build_model()
    uset = scenario.build_uncertainty()  # true disturbances, also for NTO policies
    records = monte.run_rollouts(model, policy, uset, n_samples, seed, boundary=boundary)
    report = monte.evaluate_satisfaction(records, cs)
    report.extra.update(seed=seed, boundary=boundary)
    return records, report


def run_pipeline(scenario: Scenario, mode: str, n_samples: int, seed: int,
                 out_dir: Path, boundary: bool = False, dump_conic: bool = False,
                 write_artifacts: bool = True) -> dict:
    """Execute one mode's full pipeline, returning the stats payload."""
    out_dir = Path(out_dir)
    dump_hook = None
    if dump_conic:
        dump_dir = out_dir / "conic_dumps"
        dump_dir.mkdir(parents=True, exist_ok=True)
        counter = {"n": 0}

        def dump_hook(tag, prog):
            counter["n"] += 1
            _atomic_write(dump_dir / f"{counter['n']:05d}_{tag}.txt", prog.describe() + "\n")

    cs = scenario.build_constraints()
    stats: dict = {"mode": mode, "scenario": scenario.name, "tau": scenario.tau}
    error_sets = None

    if mode == "nrto-le":
        nrto_policy, nrto_log = _solve_or_exit(scenario, "nrto", dump_hook=dump_hook)
        model = scenario.build_model()
        uset = scenario.build_uncertainty()
        fit_seed = scenario.master_seed + 1
        zetas = monte.sample_zetas(uset, scenario.n_error_fit, fit_seed)
        nom = nrto_policy.nominal
        A_list, B_list = models.linearize_along(model, nom)
        blocks = lintraj.build_blocks(A_list, B_list)
        clouds = monte.collect_linearization_errors(model, nrto_policy, blocks, zetas)
        error_sets = uncertainty.fit_error_ellipsoids(clouds, scenario.error_inflation)
        nrto_records = monte.simulate_batch(model, nrto_policy, zetas, nom.states[0])
        nrto_report = monte.evaluate_satisfaction(nrto_records, cs)
        stats["nrto_phase"] = {
            "satisfaction": nrto_report.satisfaction,
            "n_samples": nrto_report.n_samples,
            "seed": fit_seed,
            "solver": nrto_log.to_dict(),
        }
        if write_artifacts:
            _write_json(out_dir / "error_sets.json", {
                "inflation": scenario.error_inflation,
                "n_fit_samples": scenario.n_error_fit,
                "fit_seed": fit_seed,
                "ellipsoids": [e.to_dict() for e in error_sets],
            })

    policy, solve_log = _solve_or_exit(scenario, mode, error_sets=error_sets,
                                       dump_hook=dump_hook)
    records, report = _validate(scenario, policy, cs, n_samples, seed, boundary)
    stats.update(report.to_dict())
    stats["solver"] = solve_log.to_dict()

    if write_artifacts:
        _write_json(out_dir / "policy.json", {
            **policy.to_dict(), "model": scenario.model_name,
            "dt": scenario.dt, "T": scenario.T, "mode": mode,
        })
        _write_json(out_dir / "solve_log.json", solve_log.to_dict())
        _write_json(out_dir / "stats.json", stats)
        write_rollouts_csv(out_dir / "rollouts.csv", records, cs)
    return stats


def parse_sweep(spec: str) -> tuple[str, np.ndarray]:
    """Parse 'tau=START:STEP:STOP' into the parameter name and its grid."""
    try:
        name, rng = spec.split("=", 1)
        start, step, stop = (float(v) for v in rng.split(":"))
    except ValueError:
        raise ScenarioError(f"bad --sweep spec {spec!r}, expected name=start:step:stop")
    if name != "tau":
        raise ScenarioError(f"only tau sweeps are supported, got {name!r}")
    if step <= 0 or stop < start:
        raise ScenarioError(f"bad sweep range in {spec!r}")
    n = int(round((stop - start) / step)) + 1
    return name, np.round(start + step * np.arange(n), 12)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rtrajopt",
                                 description="Robust trajectory optimization runner")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="solve a scenario and Monte-Carlo validate it")
    run.add_argument("--scenario", required=True, help="scenario JSON (or manifest.json)")
    run.add_argument("--mode", choices=sco.MODES, default=None,
                     help="override the scenario's mode")
    run.add_argument("--samples", type=int, default=None,
                     help="validation rollouts (default: scenario's samples.validate)")
    run.add_argument("--seed", type=int, default=None,
                     help="master seed (default: scenario's seeds.master)")
    run.add_argument("--out-dir", required=True)
    run.add_argument("--sweep", default=None, help="e.g. tau=0.01:0.01:0.10")
    run.add_argument("--boundary-sampling", action="store_true",
                     help="validate with boundary disturbances (adversarial audit)")
    run.add_argument("--verbose", "-v", action="store_true")
    run.add_argument("--dump-conic", action="store_true",
                     help="dump assembled conic programs to out-dir/conic_dumps")
    run.add_argument("--gate", type=float, default=None,
                     help="exit 4 unless final satisfaction >= this fraction")
    return ap


def load_run_input(path: str) -> tuple[Scenario, dict]:
    """Accept a scenario file or a previously emitted manifest.json."""
    raw = json.loads(Path(path).read_text()) if Path(path).exists() else None
    if raw is not None and "scenario" in raw and "args" in raw:
        return Scenario.from_dict(raw["scenario"]), raw["args"]
    return parse_scenario(path), {}


def cmd_run(args) -> int:
    scenario, manifest_args = load_run_input(args.scenario)
    mode = args.mode or manifest_args.get("mode") or scenario.mode
    samples = args.samples or manifest_args.get("samples") or scenario.n_validate
    seed = args.seed if args.seed is not None else manifest_args.get("seed", scenario.master_seed)
    boundary = args.boundary_sampling or manifest_args.get("boundary", False)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest = {
        "scenario": scenario.to_dict(),
        "args": {"mode": mode, "samples": samples, "seed": seed, "boundary": boundary,
                 "sweep": args.sweep},
        "version": __version__,
        "status": "running",
        "artifacts": [],
    }
    _write_json(out_dir / "manifest.json", manifest)

    try:
        if args.sweep:
            name, grid = parse_sweep(args.sweep)
            rows = []
            for value in grid:
                sub_dir = out_dir / f"{name}_{value:g}"
                scn = scenario.with_overrides(**{name: float(value)})
                stats = run_pipeline(scn, mode, samples, seed, sub_dir,
                                     boundary=boundary, dump_conic=args.dump_conic)
                row = {name: float(value), "satisfaction": stats["satisfaction"]}
                if "nrto_phase" in stats:
                    row["nrto_satisfaction"] = stats["nrto_phase"]["satisfaction"]
                rows.append(row)
                log.info("sweep %s = %g: satisfaction = %.4f", name, value,
                         stats["satisfaction"])
            stats = {"mode": mode, "scenario": scenario.name, "sweep": name,
                     "rows": rows}
            _write_json(out_dir / "stats.json", stats)
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            keys = list(rows[0].keys())
            w.writerow(keys)
            for row in rows:
                w.writerow([_fmt(row[k]) if isinstance(row[k], float) else row[k]
                            for k in keys])
            _atomic_write(out_dir / "sweep.csv", buf.getvalue())
            final_satisfaction = min(r["satisfaction"] for r in rows)
        else:
            stats = run_pipeline(scenario, mode, samples, seed, out_dir,
                                 boundary=boundary, dump_conic=args.dump_conic)
            final_satisfaction = stats["satisfaction"]
    except PipelineError as err:
        manifest["status"] = f"failed: {err}"
        _write_json(out_dir / "manifest.json", manifest)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SOLVER

    manifest["status"] = "complete"
    manifest["artifacts"] = sorted(p.name for p in out_dir.iterdir() if p.is_file())
    _write_json(out_dir / "manifest.json", manifest)
    print(f"satisfaction: {final_satisfaction:.4f} "
          f"({stats.get('n_satisfied', '-')}/{stats.get('n_samples', '-')})")
    if args.gate is not None and final_satisfaction < args.gate:
        print(f"gate failed: {final_satisfaction:.4f} < {args.gate}", file=sys.stderr)
        return EXIT_GATE
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args)
        raise AssertionError(f"unhandled command {args.command}")
    except ScenarioError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
