"""Command-line front end: ``decouple solve | verify | table``.

Exit codes: 0 success, 1 configuration/runtime error or failed verification,
2 early stop on a detected singularity.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import io as dio
from .errors import ConfigError, DecoupleError
from .field_solver import derivative_consistency, solve
from .generators import check_structural_dependence
from .registry import registry_get
from .simulate import decoupling_residual, simulate_forward, z_bound_check

EXIT_OK, EXIT_ERROR, EXIT_SINGULAR = 0, 1, 2


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",")]


def _box(text: str) -> list[list[float]]:
    """``lo:hi,lo:hi`` -> [[lo, hi], ...]."""
    try:
        return [[float(a) for a in part.split(":")] for part in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad box {text!r}; expected lo:hi[,lo:hi...]") from exc


def _param(text: str):
    key, sep, val = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError("parameters take the form key=value")
    try:
        return key, json.loads(val)
    except ValueError:
        return key, val


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="decouple", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="compute the field stack and write artifacts")
    s.add_argument("--config", help="TOML config or a manifest.json from an earlier run")
    s.add_argument("--problem")
    s.add_argument("--param", action="append", type=_param, default=[], metavar="KEY=VALUE")
    s.add_argument("--k", type=int)
    s.add_argument("--dt", type=float)
    s.add_argument("--grid-nodes", type=lambda t: [int(v) for v in t.split(",")])
    s.add_argument("--box", type=_box)
    s.add_argument("--boundary-policy", choices=["clampGradient", "linearExtrapolate", "periodic"])
    s.add_argument("--interpolation", choices=["cubic", "multilinear"])
    s.add_argument("--quad-points", type=int)
    s.add_argument("--lip-blowup", type=float)
    s.add_argument("--e0-margin", type=float)
    s.add_argument("--save-every", type=int)
    s.add_argument("--paths", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--x0", type=_float_list, action="append")
    s.add_argument("--out", help="output directory (default: $DECOUPLE_OUT/<problem>)")

    v = sub.add_parser("verify", help="Monte-Carlo and structural checks on a solve directory")
    v.add_argument("directory")
    v.add_argument("--paths", type=int)
    v.add_argument("--seed", type=int)

    t = sub.add_parser("table", help="refinement table over solve directories")
    t.add_argument("directories", nargs="+")
    t.add_argument("--out", help="directory for table.csv / table.txt (default: current)")
    return ap


_FLAG_MAP = {
    "problem": "problem", "k": "k", "dt": "dt", "grid_nodes": "nodes", "box": "box",
    "boundary_policy": "boundary_policy", "interpolation": "interpolation",
    "quad_points": "quad_points", "lip_blowup": "lip_blowup", "e0_margin": "e0_margin",
    "save_every": "save_every", "paths": "paths", "seed": "seed", "x0": "x0", "out": "out",
}


def config_from_args(args) -> tuple[dio.RunConfig, Path]:
    values: dict = {}
    if args.config:
        values.update(dio.load_config_file(args.config))
    for flag, key in _FLAG_MAP.items():
        val = getattr(args, flag, None)
        if val is not None:
            values[key] = val
    if args.param:
        values["params"] = {**values.get("params", {}), **dict(args.param)}
    if "problem" not in values:
        raise ConfigError("no problem given (use --problem or a config file)")
    out = values.pop("out", None)
    cfg = dio.RunConfig(**values).resolved()
    if out is None:
        root = os.environ.get("DECOUPLE_OUT", "decouple-out")
        out = str(Path(root) / cfg.problem)
    cfg.out = None  # the manifest echoes the run, not where it was written
    return cfg, Path(out)


def _exact_errors(problem, traj) -> dict | None:
    if problem.exact is None:
        return None
    last = traj.snapshots[-1]
    X = traj.grid.points()
    errs = {
        f"u{i}": float(np.max(np.abs(last.fields[i] - problem.exact(i, last.t, X))))
        for i in range(traj.k + 1)
    }
    errs["t"] = last.t
    return errs


def cmd_solve(args) -> int:
    cfg, out = config_from_args(args)
    problem = registry_get(cfg.problem, **cfg.params)
    grid = cfg.grid()
    traj = solve(
        problem, cfg.k, grid, cfg.dt, save_every=cfg.save_every, quad_points=cfg.quad_points,
        lip_blowup=cfg.lip_blowup, e0_margin=cfg.e0_margin,
    )
    out.mkdir(parents=True, exist_ok=True)
    for old in out.glob("fields-*.csv"):
        old.unlink()
    files = []
    n_steps = int(round(problem.T / cfg.dt))
    for s in traj.snapshots:
        j = int(round((problem.T - s.t) / cfg.dt))
        if j % cfg.csv_every == 0 or s is traj.snapshots[-1]:
            name = f"fields-{s.t:.6f}.csv"
            dio.write_fields_csv(out / name, s)
            files.append(name)
    dio.save_trajectory(out / "trajectory.npz", traj)
    diag = dio.diagnostics_dict(traj, _exact_errors(problem, traj))
    diag["steps_planned"] = n_steps
    dio.write_json(out / "diagnostics.json", diag)
    manifest = {
        "config": cfg.to_dict(),
        "versions": dio.versions(),
        "artifacts": sorted(files + ["diagnostics.json", "trajectory.npz"]),
    }
    dio.write_json(out / "manifest.json", manifest)
    summary = {"status": traj.status, "triggered": traj.triggered, "sMinEstimate": traj.s_min, "out": str(out)}
    print(json.dumps(summary))
    return EXIT_SINGULAR if traj.status == "singularity" else EXIT_OK


def cmd_verify(args) -> int:
    cfg, traj, manifest, diag = dio.load_run(args.directory)
    if args.paths is not None:
        cfg.paths = args.paths
    if args.seed is not None:
        cfg.seed = args.seed
    problem = traj.problem
    failures = []

    dc = derivative_consistency(traj)
    for i, v in enumerate(dc):
        if not v <= cfg.tol_derivative:
            failures.append(f"derivative_consistency level {i}: {v:.3g} > {cfg.tol_derivative:g}")

    mc = []
    for x0 in cfg.x0:
        bundle = simulate_forward(traj, x0, cfg.paths, cfg.seed)
        rep = decoupling_residual(bundle, traj)
        zb = z_bound_check(bundle, traj)
        mc.append({"x0": x0, "report": rep.to_dict(), "z_bound": zb})
        for lv in rep.levels:
            if not abs(lv.mean) <= cfg.tol_residual:
                failures.append(f"BSDE residual level {lv.level} at x0={x0}: |mean| {abs(lv.mean):.3g}")
        if not zb["holds"]:
            failures.append(f"z bound violated at x0={x0}")

    structural = []
    for kk in range(1, traj.k + 1):
        if kk + 1 > problem.k_max:
            break
        rep = check_structural_dependence(problem, kk, trials=20, seed=cfg.seed)
        structural.append(
            {"k": kk, "deviation_a": rep.deviation_a, "deviation_b": rep.deviation_b,
             "perturbed": rep.perturbed_a}
        )
        if not rep.passes(cfg.tol_structural):
            failures.append(f"structural dependence k={kk}: deviations {rep.deviation_a:.3g}, {rep.deviation_b}")

    report = {
        "problem": cfg.problem,
        "status": "pass" if not failures else "fail",
        "failures": failures,
        "derivative_consistency": dc,
        "tolerances": {
            "derivative": cfg.tol_derivative, "residual": cfg.tol_residual,
            "structural": cfg.tol_structural,
        },
        "monte_carlo": mc,
        "structural": structural,
        "interval": [traj.snapshots[-1].t, problem.T],
    }
    dio.write_json(Path(args.directory) / "residuals.json", report)
    print(json.dumps({"status": report["status"], "failures": failures}))
    return EXIT_OK if not failures else EXIT_ERROR


def _table_rows(directories):
    rows = []
    for d in directories:
        d = Path(d)
        man, diag_path = d / "manifest.json", d / "diagnostics.json"
        if not man.is_file() or not diag_path.is_file():
            raise ConfigError(f"missing artifacts in {d}")
        manifest = json.loads(man.read_text(encoding="utf-8"))
        diag = json.loads(diag_path.read_text(encoding="utf-8"))
        cfg = dio.RunConfig(**dio.config_from_mapping(manifest)).resolved()
        h = float(np.max(cfg.grid().spacing))
        errs = diag.get("exact_errors") or {}
        row = {"problem": cfg.problem, "dir": str(d), "h": h, "dt": cfg.dt, "k": cfg.k,
               "status": diag["status"]}
        for i in range(cfg.k + 1):
            row[f"err_u{i}"] = errs.get(f"u{i}")
        rows.append(row)
    out = []
    for prob in sorted({r["problem"] for r in rows}):
        group = sorted((r for r in rows if r["problem"] == prob), key=lambda r: -r["dt"])
        prev = None
        for r in group:
            r["order_dt_u0"] = None
            if prev is not None and r.get("err_u0") and prev.get("err_u0") and prev["dt"] != r["dt"]:
                r["order_dt_u0"] = math.log(prev["err_u0"] / r["err_u0"]) / math.log(prev["dt"] / r["dt"])
            prev = r
            out.append(r)
    return out


def cmd_table(args) -> int:
    rows = _table_rows(args.directories)
    kmax = max(r["k"] for r in rows)
    cols = ["problem", "h", "dt", *[f"err_u{i}" for i in range(kmax + 1)], "order_dt_u0", "status"]
    fmt = lambda v: "" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v))
    csv_lines = [",".join(cols)] + [",".join(fmt(r.get(c)) for c in cols) for r in rows]
    widths = [max(len(c), *(len(fmt(r.get(c))) for r in rows)) for c in cols]
    text = []
    for prob in dict.fromkeys(r["problem"] for r in rows):
        text.append(f"== {prob} ==")
        text.append("  ".join(c.rjust(w) for c, w in zip(cols, widths)))
        for r in rows:
            if r["problem"] == prob:
                text.append("  ".join(fmt(r.get(c)).rjust(w) for c, w in zip(cols, widths)))
    out = Path(args.out) if args.out else Path.cwd()
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
    (out / "table.txt").write_text("\n".join(text) + "\n", encoding="utf-8")
    print("\n".join(text))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"solve": cmd_solve, "verify": cmd_verify, "table": cmd_table}
    try:
        return handlers[args.command](args)
    except (DecoupleError, ValueError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
