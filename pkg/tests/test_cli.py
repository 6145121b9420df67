import json
import math

import numpy as np
import pytest

from decouple import cli
from decouple.io import save_npz


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


HEAT_FAST = ["--problem", "heat", "--k", "1", "--dt", "0.05", "--grid-nodes", "64", "--paths", "500"]


@pytest.fixture
def heat_dir(tmp_path, capsys):
    d = tmp_path / "heat"
    code, out, _ = run(["solve", *HEAT_FAST, "--out", str(d)], capsys)
    assert code == 0, out
    return d


def test_solve_artifacts(heat_dir):
    names = sorted(p.name for p in heat_dir.iterdir())
    assert {"manifest.json", "diagnostics.json", "trajectory.npz", "fields-0.000000.csv"} <= set(names)
    manifest = json.loads((heat_dir / "manifest.json").read_text())
    assert manifest["config"]["problem"] == "heat"
    assert set(manifest["versions"]) >= {"decouple", "numpy", "python", "kernel_backend"}
    diag = json.loads((heat_dir / "diagnostics.json").read_text())
    assert diag["status"] == "complete" and diag["triggered"] == "none"
    assert diag["exact_errors"]["u0"] < 1e-3
    header = (heat_dir / "fields-0.000000.csv").read_text().splitlines()[0]
    assert header == "x1,u0[1],u1[1][1]"


def test_verify_passes(heat_dir, capsys):
    code, out, _ = run(["verify", str(heat_dir)], capsys)
    assert code == 0, out
    rep = json.loads((heat_dir / "residuals.json").read_text())
    assert rep["status"] == "pass" and rep["monte_carlo"]


def test_verify_detects_corrupted_field(heat_dir, capsys):
    npz = heat_dir / "trajectory.npz"
    with np.load(npz) as data:
        arrays = {k: data[k] for k in data.files}
    arrays["u1"] = arrays["u1"] + 0.1
    save_npz(npz, arrays)
    code, out, _ = run(["verify", str(heat_dir)], capsys)
    assert code == 1
    assert any("derivative_consistency" in f for f in json.loads(out)["failures"])


def test_manifest_rerun_is_byte_identical(heat_dir, tmp_path, capsys):
    again = tmp_path / "again"
    code, _, _ = run(["solve", "--config", str(heat_dir / "manifest.json"), "--out", str(again)], capsys)
    assert code == 0
    for name in ("trajectory.npz", "fields-0.000000.csv", "diagnostics.json"):
        assert (heat_dir / name).read_bytes() == (again / name).read_bytes(), name
    a = json.loads((heat_dir / "manifest.json").read_text())
    b = json.loads((again / "manifest.json").read_text())
    assert a == b


def test_toml_config_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        'problem = "linear"\nk = 1\ndt = 0.1\n[params]\na = 2.0\n'
        "[grid]\nbox = [[-1.0, 1.0]]\nnodes = [11]\n[verify]\npaths = 200\n"
    )
    out = tmp_path / "lin"
    code, _, _ = run(["solve", "--config", str(cfg), "--dt", "0.05", "--out", str(out)], capsys)
    assert code == 0
    conf = json.loads((out / "manifest.json").read_text())["config"]
    assert conf["dt"] == 0.05 and conf["params"] == {"a": 2.0} and conf["nodes"] == [11]
    assert conf["paths"] == 200
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["exact_errors"]["u0"] < 1e-12


def test_singularity_exit_code(tmp_path, capsys):
    code, out, _ = run(["solve", "--problem", "burgers_blowup", "--dt", "2e-3", "--out", str(tmp_path / "b")], capsys)
    assert code == 2
    summary = json.loads(out)
    assert summary["status"] == "singularity" and summary["triggered"] == "E0"
    assert 0.45 <= summary["sMinEstimate"] <= 0.55


@pytest.mark.parametrize(
    "argv",
    [
        ["solve", "--problem", "nope"],
        ["solve", "--problem", "heat", "--k", "9"],
        ["solve", "--problem", "heat", "--box", "0:1,0:1"],
        ["solve", "--problem", "linear", "--dt", "0.3"],
        ["solve", "--config", "/nonexistent.toml"],
        ["verify", "/nonexistent-dir"],
        ["table", "/nonexistent-dir"],
    ],
)
def test_errors_exit_1(argv, tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, _, err = run(argv, capsys)
    assert code == 1
    assert "error" in json.loads(err)


def test_unknown_problem_lists_names(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    _, _, err = run(["solve", "--problem", "nope"], capsys)
    msg = json.loads(err)["message"]
    assert "heat" in msg and "skorokhod" in msg


def test_default_out_from_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("DECOUPLE_OUT", str(tmp_path / "runs"))
    code, out, _ = run(["solve", "--problem", "linear", "--k", "1", "--dt", "0.25"], capsys)
    assert code == 0
    assert (tmp_path / "runs" / "linear" / "manifest.json").is_file()
    assert json.loads(out)["out"] == str(tmp_path / "runs" / "linear")


def test_table_observed_order(tmp_path, capsys):
    dirs = []
    for dt in ("0.02", "0.01", "0.005"):
        d = tmp_path / f"b{dt}"
        code, _, _ = run(
            ["solve", "--problem", "burgers_blowup", "--param", "T=0.5", "--k", "1", "--dt", dt, "--out", str(d)],
            capsys,
        )
        assert code == 0
        dirs.append(str(d))
    code, text, _ = run(["table", *dirs, str(tmp_path / "b0.01"), "--out", str(tmp_path)], capsys)
    assert code == 0
    rows = (tmp_path / "table.csv").read_text().splitlines()
    head = rows[0].split(",")
    orders = [r.split(",")[head.index("order_dt_u0")] for r in rows[1:]]
    vals = [float(v) for v in orders if v]
    assert len(vals) == 2 and min(vals) >= 0.9
    assert "== burgers_blowup ==" in text


def test_table_single_and_mixed(heat_dir, tmp_path, capsys):
    code, _, _ = run(["table", str(heat_dir), "--out", str(tmp_path / "t1")], capsys)
    assert code == 0
    lines = (tmp_path / "t1" / "table.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[1].split(",")[-2] == ""
    lin = tmp_path / "lin"
    run(["solve", "--problem", "linear", "--k", "1", "--dt", "0.25", "--out", str(lin)], capsys)
    code, text, _ = run(["table", str(heat_dir), str(lin), "--out", str(tmp_path / "t2")], capsys)
    assert code == 0
    assert "== heat ==" in text and "== linear ==" in text
