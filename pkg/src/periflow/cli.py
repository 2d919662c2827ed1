"""Command-line front end: solve-periodic | extinction | sweep | verify.

Exit codes: 0 success, 1 check failure, 2 invalid input, 3 non-convergence.
Every run writes a manifest listing each artifact with a sha256 digest;
`verify` replays the inequality audit against the stored artifacts.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .basis import SpectralField, TorusDomain, field_from_dict, field_to_dict
from .config import (
    ConfigError,
    ExperimentConfig,
    RunManifest,
    build_problem,
    config_hash,
    forcing_from_config,
    load_config,
    read_trajectory_csv,
    record_from_artifacts,
    record_from_npz,
    record_to_npz,
    write_json,
    write_trajectory_csv,
    sha256_file,
)
from .constants import EmbeddingConstants
from .diagnostics import (
    cascade_sweep,
    extinction_experiment,
    interpolation_bound_check,
    verify_energy_inequality,
)
from .integrate import DegenerateRheologyError
from .orbit import OrbitResult, ball_invariance_check, find_periodic_orbit

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID = 2
EXIT_NO_CONVERGENCE = 3


def _err(msg: str):
    print(f"periflow: {msg}", file=sys.stderr)


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.solver = replace(cfg.solver, seed=args.seed)
        cfg.raw = {**cfg.raw, "seed": args.seed}  # the hash tracks the override
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = args.out or cfg.output_dir
    if out is None:
        raise ConfigError("no output directory: pass --out or set output_dir")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _orbit_payload(cfg: ExperimentConfig, orbit: OrbitResult) -> dict:
    rec = orbit.trajectory
    return {
        "schema": "orbit-v1",
        "config_hash": config_hash(cfg),
        "period": cfg.forcing_spec["period"],
        "q": cfg.stress.q,
        "kappa": cfg.stress.kappa,
        "epsilon": cfg.reg.epsilon,
        "converged": orbit.converged,
        "residual": orbit.residual,
        "iterations": orbit.iterations,
        "method": orbit.method,
        "ball_radius_used": orbit.ball_radius_used,
        "sup_norm": rec.sup_norm(),
        "accepted_steps": rec.accepted_steps,
        "rejected_steps": rec.rejected_steps,
        "step_slack_min": rec.step_slack_min,
        "step_slack_violations": rec.step_slack_violations,
        "clamp_events": [[t, n] for t, n in rec.clamp_events],
        "initial_state": field_to_dict(orbit.initial_state),
        "start_used": field_to_dict(orbit.start_used),
        "constants": orbit.constants.to_dict(),
    }


def _write_orbit_artifacts(out: Path, cfg: ExperimentConfig, orbit: OrbitResult,
                           manifest: RunManifest, plots: bool):
    write_trajectory_csv(out / "trajectory.csv", orbit.trajectory)
    record_to_npz(out / "trajectory.npz", orbit.trajectory)
    write_json(out / "orbit.json", _orbit_payload(cfg, orbit))
    for name in ("trajectory.csv", "trajectory.npz", "orbit.json"):
        manifest.add_artifact(out, name)
    if plots:
        from .figures import render_trajectory

        render_trajectory(orbit.trajectory, out / "trajectory.png")
        manifest.add_artifact(out, "trajectory.png")


def _new_manifest(cfg: ExperimentConfig, command: str) -> RunManifest:
    return RunManifest(config_hash=config_hash(cfg), code_version=__version__,
                       command=command, seed=cfg.seed, constants=None,
                       wall_clock_s=0.0, stages={}, artifacts={})


# ---------------------------------------------------------------------------
# solve-periodic
# ---------------------------------------------------------------------------

def cmd_solve_periodic(args) -> int:
    t_start = time.perf_counter()
    try:
        cfg = _load(args)
        out = _out_dir(args, cfg)
        problem = build_problem(cfg, override_degenerate=args.override_degenerate)
        problem = problem.with_constants(cfg.constants_budget, seed=cfg.seed)
    except (ConfigError, ValueError) as exc:
        _err(str(exc))
        return EXIT_INVALID

    manifest = _new_manifest(cfg, "solve-periodic")
    try:
        orbit = find_periodic_orbit(problem, cfg.solver)
    except DegenerateRheologyError as exc:
        _err(f"{exc} (pass --override-degenerate to force)")
        return EXIT_INVALID

    manifest.constants = orbit.constants.to_dict()
    manifest.stages["solve"] = "converged" if orbit.converged else "non-converged"
    _write_orbit_artifacts(out, cfg, orbit, manifest, args.plots)
    manifest.wall_clock_s = time.perf_counter() - t_start
    write_json(out / "manifest.json", manifest.to_dict())

    print(f"residual = {orbit.residual:.6e} after {orbit.iterations} map "
          f"evaluations ({orbit.method}); artifacts in {out}")
    if not orbit.converged:
        _err(f"did not converge; best residual {orbit.residual:.6e}")
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


# ---------------------------------------------------------------------------
# extinction
# ---------------------------------------------------------------------------

def cmd_extinction(args) -> int:
    t_start = time.perf_counter()
    try:
        cfg = _load(args)
        out = _out_dir(args, cfg)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_INVALID
    if cfg.stress.q >= 2.0:
        _err(f"extinction requires q in (6/5, 2); q = {cfg.stress.q} admits "
             "no finite-time extinction")
        return EXIT_INVALID
    if cfg.forcing_spec["shutoff"] is None:
        _err("extinction requires a forcing shutoff instant")
        return EXIT_INVALID

    integrator = cfg.integrator
    if "sample_count" not in cfg.raw.get("integrator", {}):
        integrator = replace(integrator, sample_count=2048)
    try:
        problem = build_problem(cfg, override_degenerate=args.override_degenerate)
        problem = replace(problem, integrator=integrator)
        problem = problem.with_constants(cfg.constants_budget, seed=cfg.seed)
        report, orbit = extinction_experiment(
            problem, cfg.extinction_threshold_rel, cfg.solver)
    except DegenerateRheologyError as exc:
        _err(f"{exc} (pass --override-degenerate to force)")
        return EXIT_INVALID
    except ValueError as exc:
        _err(str(exc))
        return EXIT_INVALID

    manifest = _new_manifest(cfg, "extinction")
    manifest.constants = orbit.constants.to_dict()
    manifest.stages["solve"] = "converged" if orbit.converged else "non-converged"
    manifest.stages["extinction_bound"] = "ok" if report.ok else "violated"
    _write_orbit_artifacts(out, cfg, orbit, manifest, args.plots)
    write_json(out / "extinction.json", report.to_dict())
    manifest.add_artifact(out, "extinction.json")
    if args.plots:
        from .figures import render_extinction

        render_extinction(report, orbit.trajectory, out / "extinction.png")
        manifest.add_artifact(out, "extinction.png")
    manifest.wall_clock_s = time.perf_counter() - t_start
    write_json(out / "manifest.json", manifest.to_dict())

    print(f"t_bar = {report.t_bar:.6g}, t_meas = {report.t_meas:.6g}, "
          f"bound t_bar_v = {report.t_bar_v:.6g}, fit R^2 = {report.r_squared:.4f}")
    if not report.ok:
        _err("measured extinction time violates the analytic bound")
        return EXIT_CHECK_FAILED
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

class _CellCache:
    """File-backed per-cell results so interrupted sweeps resume by digest."""

    def __init__(self, out: Path, cfg_hash: str):
        self.out = out
        self.cfg_hash = cfg_hash
        self.names = {}

    def _name(self, coords) -> str:
        n, eps, kap = coords
        return f"cell_n{n}_eps{eps!r}_kap{kap!r}".replace(".", "p").replace("-", "m")

    def load(self, coords):
        import json as _json

        name = self._name(coords)
        jpath = self.out / f"{name}.json"
        npath = self.out / f"{name}.npz"
        if not (jpath.exists() and npath.exists()):
            return None
        try:
            meta = _json.loads(jpath.read_text())
            if meta.get("config_hash") != self.cfg_hash:
                return None
            if meta.get("npz_sha256") != sha256_file(npath):
                return None
            record = record_from_npz(npath)
            n, eps, kap = coords
            domain = TorusDomain(meta["dimension"], meta["side_length"], n)
            initial = SpectralField.from_real_vector(domain, record.states[0])
            start = field_from_dict(meta["start_used"])
            self.names[coords] = name
            return OrbitResult(
                initial_state=initial, residual=meta["residual"],
                iterations=meta["iterations"], method=meta["method"],
                ball_radius_used=meta["ball_radius_used"], trajectory=record,
                converged=meta["converged"], start_used=start,
                constants=EmbeddingConstants.from_dict(meta["constants"]),
            )
        except Exception:
            return None

    def store(self, coords, orbit: OrbitResult):
        name = self._name(coords)
        npath = self.out / f"{name}.npz"
        record_to_npz(npath, orbit.trajectory)
        meta = {
            "config_hash": self.cfg_hash,
            "coords": list(coords),
            "dimension": orbit.initial_state.domain.dimension,
            "side_length": orbit.initial_state.domain.side_length,
            "residual": orbit.residual,
            "iterations": orbit.iterations,
            "method": orbit.method,
            "ball_radius_used": orbit.ball_radius_used,
            "converged": orbit.converged,
            "constants": orbit.constants.to_dict(),
            "start_used": field_to_dict(orbit.start_used),
            "npz_sha256": sha256_file(npath),
        }
        write_json(self.out / f"{name}.json", meta)
        self.names[coords] = name


def cmd_sweep(args) -> int:
    t_start = time.perf_counter()
    try:
        cfg = _load(args)
        out = _out_dir(args, cfg)
        if cfg.sweep_axes is None:
            raise ConfigError("sweep: config has no sweep axes")
        problem = build_problem(cfg, override_degenerate=args.override_degenerate)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_INVALID

    cache = _CellCache(out, config_hash(cfg))
    try:
        report = cascade_sweep(cfg.sweep_axes, problem, cfg.solver,
                               seed=cfg.seed, cache=cache,
                               workers=args.workers)
    except (ValueError, DegenerateRheologyError) as exc:
        _err(str(exc))
        return EXIT_INVALID

    manifest = _new_manifest(cfg, "sweep")
    write_json(out / "cascade.json", report.to_dict())
    manifest.add_artifact(out, "cascade.json")
    for name in sorted(cache.names.values()):
        manifest.add_artifact(out, f"{name}.json")
        manifest.add_artifact(out, f"{name}.npz")
    if args.plots:
        from .figures import render_sweep_distances

        render_sweep_distances(report, out / "cascade.png")
        manifest.add_artifact(out, "cascade.png")
    all_ok = all(c.converged for c in report.cells)
    manifest.stages["sweep"] = "converged" if all_ok else "non-converged-cells"
    manifest.wall_clock_s = time.perf_counter() - t_start
    write_json(out / "manifest.json", manifest.to_dict())

    n_ok = sum(c.converged for c in report.cells)
    print(f"{n_ok}/{len(report.cells)} cells converged; artifacts in {out}")
    return EXIT_OK if all_ok else EXIT_NO_CONVERGENCE


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    import json as _json

    try:
        cfg = _load(args)
        out = Path(args.out or cfg.output_dir or "")
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_INVALID
    manifest_path = out / "manifest.json"
    if not manifest_path.exists():
        _err(f"missing artifacts: no manifest at {manifest_path}")
        return EXIT_INVALID
    manifest = RunManifest.from_dict(_json.loads(manifest_path.read_text()))
    if manifest.config_hash != config_hash(cfg):
        _err("config does not match the stored run (hash mismatch)")
        return EXIT_INVALID
    for name, digest in manifest.artifacts.items():
        path = out / name
        if not path.exists():
            _err(f"missing artifact: {name}")
            return EXIT_INVALID
        if sha256_file(path) != digest:
            _err(f"digest mismatch for {name} (artifact corrupted)")
            return EXIT_INVALID

    verdicts = {}
    if manifest.command in ("solve-periodic", "extinction"):
        orbit_meta = _json.loads((out / "orbit.json").read_text())
        consts = EmbeddingConstants.from_dict(orbit_meta["constants"])
        csv_data = read_trajectory_csv(out / "trajectory.csv")
        stored = record_from_npz(out / "trajectory.npz")
        forcing = forcing_from_config(cfg.domain, cfg.forcing_spec)
        record = record_from_artifacts(csv_data, stored.states, cfg.stress,
                                       cfg.reg, forcing)
        audit = verify_energy_inequality(record, consts)
        verdicts["energy_inequality"] = audit.to_dict()
        ball = ball_invariance_check(record, orbit_meta["ball_radius_used"])
        verdicts["ball_invariance"] = {
            "ok": ball.ok, "sup_norm": ball.sup_norm, "radius": ball.radius,
        }
        if stored.states is not None and 6.0 / 5.0 < cfg.stress.q < 3.0:
            interp = interpolation_bound_check(record, cfg.domain)
            verdicts["interpolation_bound"] = interp.to_dict()
        res = float(np.linalg.norm(stored.states[-1] - stored.states[0]))
        verdicts["residual_consistency"] = {
            "ok": bool(abs(res - orbit_meta["residual"])
                       <= 1e-9 * (1.0 + abs(res))),
            "recomputed": res, "stored": orbit_meta["residual"],
        }
    if manifest.command == "extinction":
        report = _json.loads((out / "extinction.json").read_text())
        norms = np.sqrt(np.maximum(read_trajectory_csv(out / "trajectory.csv")["kinetic"], 0.0))
        times = read_trajectory_csv(out / "trajectory.csv")["t"]
        after = (times >= report["t_bar"]) & (norms <= report["threshold"])
        t_meas = float(times[np.argmax(after)]) if np.any(after) else math.nan
        verdicts["extinction_bound"] = {
            "ok": bool(math.isfinite(t_meas)
                       and report["t_bar"] <= t_meas <= report["t_bar_v"]),
            "t_meas": t_meas, "t_bar_v": report["t_bar_v"],
        }
    if manifest.command == "sweep":
        cascade = _json.loads((out / "cascade.json").read_text())
        verdicts["cells_recorded"] = {
            "ok": len(cascade["cells"]) > 0,
            "count": len(cascade["cells"]),
        }

    ok = all(v.get("ok", False) for v in verdicts.values())
    write_json(out / "verify.json", {"ok": ok, "checks": verdicts})
    for name, v in sorted(verdicts.items()):
        print(f"{'PASS' if v.get('ok') else 'FAIL'} {name}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel workers for sweep cells")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--override-degenerate", action="store_true",
                   help="allow kappa = 0 with q < 11/5 (non-unique ODE)")
    p.add_argument("--plots", action="store_true",
                   help="render matplotlib figures next to the CSV/JSON output")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="periflow",
        description="Time-periodic power-law fluid orbits on the torus, "
                    "with a priori estimate audits.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("solve-periodic", cmd_solve_periodic),
                     ("extinction", cmd_extinction),
                     ("sweep", cmd_sweep),
                     ("verify", cmd_verify)):
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
