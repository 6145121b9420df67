"""Run configuration, artifact writing and loading."""

from __future__ import annotations

import io as _io
import json
import math
import platform
import sys
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError
from .field_solver import FieldStack, FieldTrajectory, SingularityDiagnostics
from .grid import GridSpec
from .registry import registry_get

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__version__ = "0.1.0"


@dataclass
class RunConfig:
    """Everything needed to reproduce a solve and its verification.

    Precedence: registry defaults < config file < command-line flags.
    """

    problem: str
    params: dict = field(default_factory=dict)
    k: int | None = None
    dt: float | None = None
    box: list | None = None
    nodes: list | None = None
    boundary_policy: str | None = None
    interpolation: str = "cubic"
    quad_points: int = 5
    lip_blowup: float = 1e3
    e0_margin: float | None = None
    save_every: int = 1
    csv_every: int | None = None
    paths: int = 2000
    seed: int = 0
    x0: list | None = None
    tol_derivative: float = 1e-2
    tol_residual: float = 5e-2
    tol_structural: float = 1e-10
    out: str | None = None

    def resolved(self) -> "RunConfig":
        """Copy with registry defaults filled in and values validated."""
        problem = registry_get(self.problem, **self.params)
        h = problem.hints
        cfg = RunConfig(**asdict(self))
        cfg.k = h.get("k", 1) if cfg.k is None else int(cfg.k)
        cfg.dt = float(h.get("dt", 1e-2) if cfg.dt is None else cfg.dt)
        cfg.box = [list(map(float, b)) for b in (h["box"] if cfg.box is None else cfg.box)]
        cfg.nodes = [int(v) for v in (h["nodes"] if cfg.nodes is None else cfg.nodes)]
        cfg.boundary_policy = cfg.boundary_policy or h.get("boundary_policy", "linearExtrapolate")
        if cfg.x0 is None:
            cfg.x0 = [[0.0] * problem.n]
        cfg.x0 = [list(map(float, p)) for p in cfg.x0]
        if not 0 <= cfg.k <= problem.k_max - 1:
            raise ConfigError(f"k must lie in [0, {problem.k_max - 1}]")
        if len(cfg.box) != problem.n or len(cfg.nodes) != problem.n:
            raise ConfigError(f"box and nodes need {problem.n} axes")
        if any(len(p) != problem.n for p in cfg.x0):
            raise ConfigError(f"x0 entries need {problem.n} coordinates")
        if cfg.dt <= 0 or cfg.paths < 1 or cfg.quad_points < 1 or cfg.save_every < 1:
            raise ConfigError("dt, paths, quad_points and save_every must be positive")
        steps = int(round(problem.T / cfg.dt))
        if cfg.csv_every is None:
            cfg.csv_every = max(1, steps // 10)
        return cfg

    def grid(self) -> GridSpec:
        return GridSpec(self.box, self.nodes, self.boundary_policy, self.interpolation)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "grid": {"box", "nodes", "boundary_policy", "interpolation"},
    "thresholds": {"lip_blowup", "e0_margin"},
    "verify": {"paths", "seed", "x0", "tol_derivative", "tol_residual", "tol_structural"},
}


def config_from_mapping(data: dict) -> dict:
    """Flatten a nested config mapping (TOML layout or manifest) into RunConfig fields."""
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    flat: dict = {}
    known = set(RunConfig.__dataclass_fields__)
    for key, val in data.items():
        if key in _SECTIONS and isinstance(val, dict):
            for sub, v in val.items():
                if sub not in _SECTIONS[key]:
                    raise ConfigError(f"unknown key {key}.{sub}")
                flat[sub] = v
        elif key in known:
            flat[key] = val
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return flat


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_mapping(data)


def versions() -> dict:
    import sympy

    return {
        "decouple": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "sympy": sympy.__version__,
        "kernel_backend": kernels.BACKEND,
    }


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def finite_or_str(v):
    if v is None or (isinstance(v, float) and math.isfinite(v)):
        return v
    if isinstance(v, float):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


def column_names(n: int, shapes: list) -> list[str]:
    cols = [f"x{a + 1}" for a in range(n)]
    for i, sh in enumerate(shapes):
        for idx in np.ndindex(*sh):
            cols.append(f"u{i}" + "".join(f"[{j + 1}]" for j in idx))
    return cols


def write_fields_csv(path: Path, stack: FieldStack) -> None:
    X = stack.grid.points()
    G = X.shape[0]
    shapes = [u.shape[1:] for u in stack.fields]
    data = np.concatenate([X] + [u.reshape(G, -1) for u in stack.fields], axis=1)
    buf = _io.StringIO()
    buf.write(",".join(column_names(X.shape[1], shapes)) + "\n")
    np.savetxt(buf, data, fmt="%.17g", delimiter=",")
    path.write_text(buf.getvalue(), encoding="utf-8")


def save_npz(path: Path, arrays: dict) -> None:
    """Deterministic ``.npz`` (fixed member timestamps) so reruns are byte-identical."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(arrays):
            buf = _io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def save_trajectory(path: Path, traj: FieldTrajectory) -> None:
    arrays = {"times": traj.times}
    for i in range(traj.k + 1):
        arrays[f"u{i}"] = np.stack([s.fields[i] for s in traj.snapshots])
    save_npz(path, arrays)


def load_run(directory: str | Path):
    """Load ``(config, trajectory)`` from a solve artifact directory."""
    d = Path(directory)
    man, npz = d / "manifest.json", d / "trajectory.npz"
    if not man.is_file() or not npz.is_file():
        raise ConfigError(f"{d} is not a solve artifact directory (manifest.json/trajectory.npz missing)")
    manifest = json.loads(man.read_text(encoding="utf-8"))
    cfg = RunConfig(**config_from_mapping(manifest)).resolved()
    problem = registry_get(cfg.problem, **cfg.params)
    grid = cfg.grid()
    diag = json.loads((d / "diagnostics.json").read_text(encoding="utf-8"))
    with np.load(npz) as data:
        times = data["times"]
        levels = [data[f"u{i}"] for i in range(cfg.k + 1)]
    snaps = []
    for j, t in enumerate(times):
        s = FieldStack(float(t), [lv[j] for lv in levels], grid)
        s.update_diagnostics()
        snaps.append(s)
    traj = FieldTrajectory(problem, grid, cfg.k, cfg.dt, snaps, [], quad_points=cfg.quad_points)
    traj.status = diag.get("status", "complete")
    traj.triggered = diag.get("triggered", "none")
    traj.s_min = diag.get("sMinEstimate")
    return cfg, traj, manifest, diag


def diagnostics_dict(traj: FieldTrajectory, exact_errors: dict | None) -> dict:
    history = [h.to_dict() for h in traj.diagnostics]
    last = traj.snapshots[-1]
    return {
        "status": traj.status,
        "triggered": traj.triggered,
        "sMinEstimate": traj.s_min,
        "interval": [traj.interval[0], traj.interval[1]],
        "interval_note": "(sMinEstimate, T]" if traj.s_min is not None else "[t_end, T]",
        "sMin_precision": traj.dt,
        "message": traj.message,
        "derivative_source": traj.problem.derivative_source,
        "L_sigma_z": traj.problem.L_sigma_z,
        "final_t": last.t,
        "final_sup_norms": [finite_or_str(v) for v in last.sup_norms],
        "final_lip_estimates": [finite_or_str(v) for v in last.lip_estimates],
        "max_sup_norms": [
            finite_or_str(max(s.sup_norms[i] for s in traj.snapshots)) for i in range(traj.k + 1)
        ],
        "max_lip_estimates": [
            finite_or_str(max(s.lip_estimates[i] for s in traj.snapshots)) for i in range(traj.k + 1)
        ],
        "exact_errors": exact_errors,
        "history": history,
    }


def diagnostics_from_history(history: list) -> list[SingularityDiagnostics]:
    out = []
    for h in history:
        f = lambda v: float(v) if v is not None else None
        out.append(
            SingularityDiagnostics(
                h["t"], f(h["E0_margin"]), f(h["E1"]), f(h["E2"]), f(h["lip0"]),
                h["triggered"], h["sMinEstimate"], h["E2_essential"],
            )
        )
    return out
