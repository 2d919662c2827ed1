"""Experiment configuration (strict JSON schema v1), manifests and artifacts.

Physical parameters (q, kappa, epsilon, the period T) must be explicit in
the config; only numerical knobs carry defaults.  Unknown keys are rejected
with the offending JSON path.  Every emitted artifact is listed in a run
manifest with a content digest, and all JSON output uses shortest
round-trip float representations, so identical configs and seeds reproduce
bit-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .basis import TorusDomain
from .galerkin import ForcingMode, ForcingSignal
from .integrate import IntegratorConfig, TrajectoryRecord
from .orbit import FixedPointConfig, Problem
from .rheology import RegularizationParams, StressParams

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunManifest",
    "load_config",
    "parse_config",
    "build_problem",
    "canonical_json",
    "config_hash",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "record_to_npz",
    "record_from_artifacts",
]

SCHEMA_VERSION = 1
TRAJECTORY_COLUMNS = ("t", "kinetic", "dissipation_q", "dissipation_lap",
                      "dissipation_p", "power_in")


class ConfigError(ValueError):
    """Invalid experiment configuration; message carries the JSON path."""


def _require(obj: dict, path: str, keys, optional=()):
    unknown = set(obj) - set(keys) - set(optional)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    for k in keys:
        if k not in obj:
            raise ConfigError(f"{path}.{k}: required key is missing")


def _number(obj, path):
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {obj!r}")
    return float(obj)


def _integer(obj, path):
    if isinstance(obj, bool) or not isinstance(obj, int):
        raise ConfigError(f"{path}: expected an integer, got {obj!r}")
    return int(obj)


@dataclass
class ExperimentConfig:
    seed: int
    domain: TorusDomain
    stress: StressParams
    reg: RegularizationParams
    forcing_spec: dict
    integrator: IntegratorConfig
    solver: FixedPointConfig
    constants_budget: int
    sweep_axes: dict | None
    extinction_threshold_rel: float
    output_dir: str | None
    raw: dict = field(repr=False, default_factory=dict)

    def forcing(self, domain: TorusDomain | None = None) -> ForcingSignal:
        return forcing_from_config(domain or self.domain, self.forcing_spec)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: line {exc.lineno}: {exc.msg}") from exc
    return parse_config(data)


def parse_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level: expected a JSON object")
    _require(data, "config",
             ["schema_version", "seed", "domain", "stress", "regularization",
              "forcing"],
             optional=["integrator", "solver", "constants", "sweep",
                       "extinction", "output_dir"])
    if data["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version: expected {SCHEMA_VERSION}, got {data['schema_version']}")
    seed = _integer(data["seed"], "seed")

    dom = data["domain"]
    _require(dom, "domain", ["dimension", "side_length", "mode_cutoff"])
    try:
        domain = TorusDomain(_integer(dom["dimension"], "domain.dimension"),
                             _number(dom["side_length"], "domain.side_length"),
                             _integer(dom["mode_cutoff"], "domain.mode_cutoff"))
    except ValueError as exc:
        raise ConfigError(f"domain: {exc}") from exc

    st = data["stress"]
    _require(st, "stress", ["q", "kappa"])
    q = _number(st["q"], "stress.q")
    kappa = _number(st["kappa"], "stress.kappa")
    if not q > 6.0 / 5.0:
        raise ConfigError(
            f"stress.q: the existence theory requires q > 6/5, got q = {q}")
    try:
        stress = StressParams(q=q, kappa=kappa)
    except ValueError as exc:
        raise ConfigError(f"stress: {exc}") from exc

    rg = data["regularization"]
    _require(rg, "regularization", ["epsilon"])
    try:
        reg = RegularizationParams(epsilon=_number(rg["epsilon"],
                                                   "regularization.epsilon"))
    except ValueError as exc:
        raise ConfigError(f"regularization: {exc}") from exc

    fc = data["forcing"]
    _require(fc, "forcing", ["period", "modes"], optional=["shutoff"])
    forcing_spec = {
        "period": _number(fc["period"], "forcing.period"),
        "shutoff": None if fc.get("shutoff") is None
        else _number(fc["shutoff"], "forcing.shutoff"),
        "modes": [],
    }
    if not isinstance(fc["modes"], list):
        raise ConfigError("forcing.modes: expected a list")
    for i, m in enumerate(fc["modes"]):
        path = f"forcing.modes[{i}]"
        _require(m, path, ["wavevector", "polarization", "amplitude"],
                 optional=["profile", "harmonic", "phase"])
        wv = m["wavevector"]
        if not (isinstance(wv, list) and len(wv) == domain.dimension
                and all(isinstance(x, int) and not isinstance(x, bool) for x in wv)):
            raise ConfigError(f"{path}.wavevector: expected {domain.dimension} integers")
        amp = m["amplitude"]
        if not (isinstance(amp, list) and len(amp) == 2):
            raise ConfigError(f"{path}.amplitude: expected [re, im]")
        forcing_spec["modes"].append({
            "wavevector": [int(x) for x in wv],
            "polarization": _integer(m["polarization"], f"{path}.polarization"),
            "amplitude": [_number(amp[0], f"{path}.amplitude[0]"),
                          _number(amp[1], f"{path}.amplitude[1]")],
            "profile": m.get("profile", "constant"),
            "harmonic": _integer(m.get("harmonic", 1), f"{path}.harmonic"),
            "phase": _number(m.get("phase", 0.0), f"{path}.phase"),
        })
    try:
        forcing_from_config(domain, forcing_spec)
    except ValueError as exc:
        raise ConfigError(f"forcing: {exc}") from exc

    it = data.get("integrator", {})
    _require(it, "integrator", [],
             optional=["rel_tol", "abs_tol", "max_dt", "min_dt", "scheme",
                       "energy_monitor", "sample_count", "store_states"])
    try:
        integrator = IntegratorConfig(
            rel_tol=_number(it.get("rel_tol", 1e-8), "integrator.rel_tol"),
            abs_tol=_number(it.get("abs_tol", 1e-10), "integrator.abs_tol"),
            max_dt=_number(it.get("max_dt", math.inf), "integrator.max_dt"),
            min_dt=_number(it.get("min_dt", 1e-12), "integrator.min_dt"),
            scheme=it.get("scheme", "imex_stiff"),
            energy_monitor=bool(it.get("energy_monitor", True)),
            sample_count=_integer(it.get("sample_count", 512),
                                  "integrator.sample_count"),
            store_states=bool(it.get("store_states", True)),
        )
    except ValueError as exc:
        raise ConfigError(f"integrator: {exc}") from exc

    sv = data.get("solver", {})
    _require(sv, "solver", [],
             optional=["tol", "max_picard", "anderson_window", "max_anderson",
                       "max_newton", "newton_inner", "multi_start"])
    solver = FixedPointConfig(
        tol=None if sv.get("tol") is None else _number(sv["tol"], "solver.tol"),
        max_picard=_integer(sv.get("max_picard", 40), "solver.max_picard"),
        anderson_window=_integer(sv.get("anderson_window", 5),
                                 "solver.anderson_window"),
        max_anderson=_integer(sv.get("max_anderson", 60), "solver.max_anderson"),
        max_newton=_integer(sv.get("max_newton", 12), "solver.max_newton"),
        newton_inner=_integer(sv.get("newton_inner", 30), "solver.newton_inner"),
        multi_start=_integer(sv.get("multi_start", 3), "solver.multi_start"),
        seed=seed,
    )

    co = data.get("constants", {})
    _require(co, "constants", [], optional=["sample_budget"])
    budget = _integer(co.get("sample_budget", 400), "constants.sample_budget")

    sweep_axes = None
    if "sweep" in data:
        sw = data["sweep"]
        _require(sw, "sweep", [], optional=["n_max", "epsilon", "kappa"])
        sweep_axes = {}
        for axis in ("n_max", "epsilon", "kappa"):
            if axis in sw:
                if not (isinstance(sw[axis], list) and sw[axis]):
                    raise ConfigError(f"sweep.{axis}: expected a nonempty list")
                sweep_axes[axis] = sw[axis]
        if not sweep_axes:
            raise ConfigError("sweep: at least one axis required")

    ex = data.get("extinction", {})
    _require(ex, "extinction", [], optional=["threshold_rel"])
    threshold_rel = _number(ex.get("threshold_rel", 1e-10),
                            "extinction.threshold_rel")

    output_dir = data.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError("output_dir: expected a string")

    return ExperimentConfig(
        seed=seed, domain=domain, stress=stress, reg=reg,
        forcing_spec=forcing_spec, integrator=integrator, solver=solver,
        constants_budget=budget, sweep_axes=sweep_axes,
        extinction_threshold_rel=threshold_rel, output_dir=output_dir,
        raw=data,
    )


def forcing_from_config(domain: TorusDomain, spec: dict) -> ForcingSignal:
    modes = [
        ForcingMode(
            wavevector=tuple(m["wavevector"]),
            polarization=m["polarization"],
            amplitude=complex(m["amplitude"][0], m["amplitude"][1]),
            profile=m["profile"],
            harmonic=m["harmonic"],
            phase=m["phase"],
        )
        for m in spec["modes"]
    ]
    return ForcingSignal(domain, spec["period"], modes, shutoff=spec["shutoff"])


def build_problem(cfg: ExperimentConfig,
                  override_degenerate: bool = False) -> Problem:
    integrator = cfg.integrator
    if override_degenerate:
        integrator = replace(integrator, override_degenerate=True)
    return Problem(domain=cfg.domain, stress=cfg.stress, reg=cfg.reg,
                   forcing=cfg.forcing(), consts=None, integrator=integrator)


# ---------------------------------------------------------------------------
# canonical serialization and digests
# ---------------------------------------------------------------------------

def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, shortest round-trip floats."""
    return json.dumps(obj, sort_keys=True, indent=1)


def write_json(path, obj):
    Path(path).write_text(canonical_json(obj) + "\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    command: str
    seed: int
    constants: dict | None
    wall_clock_s: float
    stages: dict
    artifacts: dict

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash, "code_version": self.code_version,
            "command": self.command, "seed": self.seed,
            "constants": self.constants, "wall_clock_s": self.wall_clock_s,
            "stages": self.stages, "artifacts": self.artifacts,
        }

    @staticmethod
    def from_dict(data: dict) -> "RunManifest":
        return RunManifest(**data)

    def add_artifact(self, out_dir, name):
        self.artifacts[name] = sha256_file(Path(out_dir) / name)


# ---------------------------------------------------------------------------
# trajectory artifacts
# ---------------------------------------------------------------------------

def write_trajectory_csv(path, record: TrajectoryRecord):
    """The delimited contract: t, kinetic, dissipation_q, dissipation_lap,
    dissipation_p, power_in, one row per sample."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for i in range(len(record)):
            writer.writerow([
                repr(float(record.times[i])),
                repr(float(record.kinetic[i])),
                repr(float(record.dissipation_q[i])),
                repr(float(record.dissipation_lap[i])),
                repr(float(record.dissipation_p[i])),
                repr(float(record.power_in[i])),
            ])


def read_trajectory_csv(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRAJECTORY_COLUMNS:
            raise ValueError(f"unexpected trajectory header: {header}")
        rows = np.array([[float(x) for x in row] for row in reader])
    return {name: rows[:, i] for i, name in enumerate(TRAJECTORY_COLUMNS)}


def record_to_npz(path, record: TrajectoryRecord):
    arrays = {
        "times": record.times, "kinetic": record.kinetic,
        "dissipation_q": record.dissipation_q,
        "dissipation_lap": record.dissipation_lap,
        "dissipation_p": record.dissipation_p, "power_in": record.power_in,
        "int_dissipation_q": record.int_dissipation_q,
        "int_dissipation_lap": record.int_dissipation_lap,
        "int_dissipation_p": record.int_dissipation_p,
        "int_power": record.int_power,
        "int_forcing_qdual": record.int_forcing_qdual,
        "meta": np.array([record.q, record.kappa, record.epsilon,
                          record.step_slack_min,
                          float(record.step_slack_violations),
                          float(record.accepted_steps),
                          float(record.rejected_steps)]),
    }
    if record.states is not None:
        arrays["states"] = record.states
    np.savez_compressed(path, **arrays)


def record_from_npz(path) -> TrajectoryRecord:
    data = np.load(path)
    meta = data["meta"]
    return TrajectoryRecord(
        times=data["times"], kinetic=data["kinetic"],
        dissipation_q=data["dissipation_q"],
        dissipation_lap=data["dissipation_lap"],
        dissipation_p=data["dissipation_p"], power_in=data["power_in"],
        int_dissipation_q=data["int_dissipation_q"],
        int_dissipation_lap=data["int_dissipation_lap"],
        int_dissipation_p=data["int_dissipation_p"],
        int_power=data["int_power"],
        int_forcing_qdual=data["int_forcing_qdual"],
        q=float(meta[0]), kappa=float(meta[1]), epsilon=float(meta[2]),
        states=data["states"] if "states" in data else None,
        accepted_steps=int(meta[5]), rejected_steps=int(meta[6]),
        step_slack_min=float(meta[3]), step_slack_violations=int(meta[4]),
    )


def _cumtrapz(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))
    return out


def record_from_artifacts(csv_data: dict, states: np.ndarray | None,
                          stress: StressParams, reg: RegularizationParams,
                          forcing: ForcingSignal) -> TrajectoryRecord:
    """Rebuild a checkable record from the CSV contract (and optional states).

    The cumulative estimate integrals are recomputed by trapezoid over the
    sample grid; this is the independent path `verify` uses against stored
    trajectories.
    """
    t = csv_data["t"]
    bq = np.array([forcing.l2_norm(tt) ** stress.q_dual for tt in t])
    return TrajectoryRecord(
        times=t, kinetic=csv_data["kinetic"],
        dissipation_q=csv_data["dissipation_q"],
        dissipation_lap=csv_data["dissipation_lap"],
        dissipation_p=csv_data["dissipation_p"],
        power_in=csv_data["power_in"],
        int_dissipation_q=_cumtrapz(csv_data["dissipation_q"], t),
        int_dissipation_lap=_cumtrapz(csv_data["dissipation_lap"], t),
        int_dissipation_p=_cumtrapz(csv_data["dissipation_p"], t),
        int_power=_cumtrapz(csv_data["power_in"], t),
        int_forcing_qdual=_cumtrapz(bq, t),
        q=stress.q, kappa=stress.kappa, epsilon=reg.epsilon,
        states=states,
    )
