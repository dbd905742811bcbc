import csv
import json
import subprocess
import sys

import pytest
import tomli
import tomli_w

from floerpde.cli import run
from floerpde.config import shipped_config


def write_config(tmp_path, name, **overrides):
    doc = tomli.loads(shipped_config(name).read_text())
    for table, values in overrides.items():
        doc.setdefault(table, {}).update(values)
    path = tmp_path / f"{name}.toml"
    path.write_text(tomli_w.dumps(doc))
    return path


def read(out, name):
    return (out / name).read_bytes().decode("utf-8")


def test_zero_spec_solve_periodic(tmp_path):
    out = tmp_path / "out"
    code = run(["solve-periodic", "--config", str(shipped_config("zero_spec")), "--output", str(out)])
    assert code == 0
    report = json.loads(read(out, "report.json"))
    assert report["verdict"] == "PASS" and report["checks"]["hb_converged"]
    assert {"report.json", "manifest.json", "solution.json", "decay_audit.csv"} <= {p.name for p in out.iterdir()}


def test_resonant_diophantine_exit_2(tmp_path):
    out = tmp_path / "out"
    assert run(["diophantine", "--config", str(shipped_config("resonant")), "--output", str(out)]) == 2
    report = json.loads(read(out, "report.json"))
    assert report["verdict"] == "FAIL" and not report["checks"]["admissible"]


def test_golden_diophantine(tmp_path):
    out = tmp_path / "out"
    assert run(["diophantine", "--config", str(shipped_config("golden_d1")), "--output", str(out)]) == 0
    rows = list(csv.reader(read(out, "divisor_table.csv").splitlines()))
    assert len(rows) == 257


@pytest.mark.parametrize(
    "text, fragment",
    [
        ('[model]\nperiod_T = "3"\nbogus = 1\n', ":3:"),
        ('[model]\nperiod_T = "3\n', "TOML syntax error"),
    ],
)
def test_bad_config_exit_1(tmp_path, capsys, text, fragment):
    path = tmp_path / "bad.toml"
    path.write_text(text)
    assert run(["flow", "--config", str(path), "--output", str(tmp_path / "o")]) == 1
    assert fragment in capsys.readouterr().err


def test_usage_errors(tmp_path):
    assert run(["nonsense", "--config", "x"]) == 1
    assert run(["flow"]) == 1
    assert run(["flow", "--config", str(shipped_config("zero_spec")), "--jobs", "0"]) == 1
    assert run(["flow", "--config", str(tmp_path / "missing.toml")]) == 1


def test_counterexample_commands(tmp_path):
    liou = write_config(tmp_path, "zero_spec", counterexample={"schedule": "liouville", "depth": 6})
    assert run(["counterexample", "--config", str(liou), "--output", str(tmp_path / "a")]) == 0
    assert run(["counterexample", "--config", str(shipped_config("golden_counterexample")), "--output", str(tmp_path / "b")]) == 2
    report = json.loads(read(tmp_path / "b", "report.json"))
    assert report["checks"]["solution_coefficients_exactly_one"]


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, "zero_spec", flow={"steps_per_period": 8})
    doc = tomli.loads(cfg.read_text())
    doc["output_dir"] = str(tmp_path / "from_config")
    cfg.write_text(tomli_w.dumps(doc))
    monkeypatch.delenv("OUTPUT_DIR", raising=False)
    assert run(["flow", "--config", str(cfg)]) == 0
    assert (tmp_path / "from_config" / "report.json").exists()
    monkeypatch.setenv("OUTPUT_DIR", str(tmp_path / "from_env"))
    assert run(["flow", "--config", str(cfg)]) == 0
    assert (tmp_path / "from_env" / "report.json").exists()
    assert run(["flow", "--config", str(cfg), "--output", str(tmp_path / "from_flag")]) == 0
    assert (tmp_path / "from_flag" / "report.json").exists()


def test_flow_trace_and_manifest(tmp_path):
    cfg = write_config(tmp_path, "zero_spec", flow={"steps_per_period": 16})
    out = tmp_path / "out"
    assert run(["flow", "--config", str(cfg), "--trace", "--seed", "7", "--output", str(out)]) == 0
    trace = read(out, "trace.csv")
    assert trace.startswith("t,norm_0,norm_minus_h,F\r\n")
    manifest = json.loads(read(out, "manifest.json"))
    assert manifest["seed"] == 7 and manifest["verdict"] == "PASS"
    assert len(manifest["config_sha256"]) == 64 and manifest["precision_bits"] == 256
    assert set(manifest["versions"]) >= {"python", "numpy", "scipy"}
    assert "total" in manifest["timings"]
    report = json.loads(read(out, "report.json"))
    assert report["flow"]["two_path_defect"] < 1e-12


def test_runs_are_deterministic(tmp_path):
    cfg = write_config(tmp_path, "reference_nls", window={"N": 8, "P": 8})
    outs = [tmp_path / "a", tmp_path / "b"]
    codes = {run(["solve-periodic", "--config", str(cfg), "--output", str(out)]) for out in outs}
    assert len(codes) == 1
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == sorted(p.name for p in outs[1].iterdir())
    for name in names:
        if name != "manifest.json":
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_convergence_study(tmp_path):
    cfg = write_config(tmp_path, "reference_nls", convergence={"ladder": [[4, 4], [8, 8], [16, 16], [32, 32]]})
    out = tmp_path / "out"
    assert run(["convergence-study", "--config", str(cfg), "--jobs", "2", "--output", str(out)]) == 0
    rows = list(csv.DictReader(read(out, "convergence.csv").splitlines()))
    assert len(rows) == 4
    tails = [float(r["tail"]) for r in rows]
    assert all(b < a for a, b in zip(tails, tails[1:]))


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "floerpde.cli", "linear-solve", "--config", str(shipped_config("zero_spec")), "--output", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "linear-solve: PASS" in proc.stdout
