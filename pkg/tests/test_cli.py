import csv
import json
import subprocess
import sys

import numpy as np
import pytest

import qsmooth.quantum
from qsmooth import __version__
from qsmooth.cli import main, parse_sweep
from qsmooth.errors import ConfigError
from qsmooth.oracles import corrupted_q
from qsmooth.pipeline import CSV_COLUMNS

FAST_RUN = {"dt": 0.001, "T": 0.5, "seed": 7}


def write_config(tmp_path, name="scenario", **extra):
    data = {"name": name, "system": {"preset": "fig1-bottom"}, "run": dict(FAST_RUN)}
    data.update(extra)
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(data))
    return path


def run_cli(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_run_writes_csv_report_and_manifest(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, out, _ = run_cli(["run", cfg, "--output-root", tmp_path / "out"], capsys)
    assert code == 0
    run_dir = tmp_path / "out" / "runs" / "scenario"
    files = json.loads(out)["files"]
    assert set(files) == {"trajectory", "report"}

    with open(run_dir / "trajectory.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 1 + 501
    assert all(len(r) == len(CSV_COLUMNS) for r in rows)
    assert float(rows[1][0]) == 0.0 and float(rows[-1][0]) == pytest.approx(0.5)
    assert rows[1][-1] == "0"

    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["seed"] == 7
    assert manifest["version"] == __version__
    assert manifest["grid"] == {"dt": 0.001, "T": 0.5, "steps": 500}
    assert manifest["rng"]["generator"] == "Philox"
    assert set(manifest["matrices"]) == {"A", "D", "C_o", "C_u", "Gamma_o", "Gamma_u"}
    assert manifest["config"]["run"]["seed"] == 7

    report = json.loads((run_dir / "report.json").read_text())
    assert report["condition_met"] is False
    assert report["smoothness"]["window"] == [0.3, 0.5]


def test_repeated_seed_gives_identical_bytes(tmp_path, capsys):
    cfg = write_config(tmp_path)
    for root in ("a", "b"):
        assert run_cli(["run", cfg, "--output-root", tmp_path / root], capsys)[0] == 0
    paths = [tmp_path / root / "runs" / "scenario" / "trajectory.csv" for root in ("a", "b")]
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_different_seed_changes_trajectory(tmp_path, capsys):
    a = write_config(tmp_path, name="a")
    b = write_config(tmp_path, name="b", run=dict(FAST_RUN, seed=8))
    run_cli(["run", a, "--output-root", tmp_path], capsys)
    run_cli(["run", b, "--output-root", tmp_path], capsys)
    assert ((tmp_path / "runs/a/trajectory.csv").read_bytes()
            != (tmp_path / "runs/b/trajectory.csv").read_bytes())


def test_output_root_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("QSMOOTH_OUTPUT_ROOT", str(tmp_path / "env"))
    cfg = write_config(tmp_path, outputs={"report": False, "estimators": ["quantum_mfp"]})
    assert run_cli(["run", cfg], capsys)[0] == 0
    run_dir = tmp_path / "env" / "runs" / "scenario"
    assert sorted(p.name for p in run_dir.iterdir()) == ["manifest.json", "trajectory.csv"]
    rows = list(csv.reader(open(run_dir / "trajectory.csv", newline="")))
    # no classical smoother requested
    assert rows[1][CSV_COLUMNS.index("q_Scl")] == "nan"


def test_invalid_config_exits_2_before_writing(tmp_path, capsys):
    cfg = write_config(tmp_path, run={"dt": 0.0})
    code, _, err = run_cli(["run", cfg, "--output-root", tmp_path / "out"], capsys)
    assert code == 2
    assert "run.dt" in err
    assert not (tmp_path / "out").exists()


def test_divergent_scenario_exits_3_before_writing(tmp_path, capsys):
    # inverted oscillator whose channels carry no information
    cfg = write_config(
        tmp_path,
        system={"n_modes": 1, "G": [[1.0, 0.0], [0.0, -1.0]], "B": [[0.0, 0.0], [0.0, 0.0]]},
        unravelling={"M_o": [[1.0, 0.0], [0.0, 0.0]], "M_u": [[0.0, 0.0], [0.0, 1.0]]},
    )
    code, _, err = run_cli(["run", cfg, "--output-root", tmp_path / "out"], capsys)
    assert code == 3
    assert "did not converge" in err
    assert not (tmp_path / "out").exists()
    assert run_cli(["analyze", cfg], capsys)[0] == 3


def test_analyze_reports_condition(tmp_path, capsys):
    top = tmp_path / "top.json"
    top.write_text(json.dumps({"system": {"preset": "fig1-top"}}))
    code, out, _ = run_cli(["analyze", top], capsys)
    assert code == 0
    report = json.loads(out)
    assert report["condition_met"] is True
    assert report["gain_norm"] < 1e-6


def test_sweep_is_true_only_at_unit_g(tmp_path, capsys):
    top = tmp_path / "top.json"
    top.write_text(json.dumps({"system": {"preset": "fig1-top"}}))
    code, out, _ = run_cli(["analyze", top, "--sweep", "g=0.5:1.5:0.25"], capsys)
    assert code == 0
    rows = json.loads(out)
    assert [r["g"] for r in rows] == [0.5, 0.75, 1.0, 1.25, 1.5]
    assert [r["condition_met"] for r in rows] == [False, False, True, False, False]


def test_parse_sweep():
    np.testing.assert_allclose(parse_sweep("g=0.1:0.3:0.1"), [0.1, 0.2, 0.3])
    for bad in ("g=1:0:0.1", "h=0:1:0.1", "g=0:1", "g=0:1:0"):
        with pytest.raises(ConfigError):
            parse_sweep(bad)


def test_bad_sweep_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert run_cli(["analyze", cfg, "--sweep", "g=1:0:1"], capsys)[0] == 2


def test_presets_list(capsys):
    code, out, _ = run_cli(["presets", "list"], capsys)
    assert code == 0
    assert [line.split("\t")[0] for line in out.strip().splitlines()] == ["fig1-top", "fig1-bottom"]


def test_oracle_passes_and_writes_report(tmp_path, capsys):
    target = tmp_path / "oracle.json"
    code, out, _ = run_cli(["oracle", "--seeds", "1", "--dt", "1e-4", "--T", "0.5", "--output", target], capsys)
    assert code == 0
    assert json.loads(target.read_text()) == json.loads(out)


def test_oracle_fails_with_exit_4_on_coarse_grid(capsys):
    # first-order gaps at dt = 1e-3 exceed the absolute tolerances
    assert run_cli(["oracle", "--seeds", "1", "--dt", "1e-3", "--T", "0.5"], capsys)[0] == 4


def test_oracle_detects_corrupted_smoothing_term(capsys, monkeypatch):
    monkeypatch.setattr(qsmooth.quantum, "smoothing_q", corrupted_q)
    code, out, _ = run_cli(["oracle", "--seeds", "1", "--dt", "1e-4", "--T", "0.5"], capsys)
    assert code == 4
    failed = {c["name"] for c in json.loads(out)["checks"] if not c["passed"]}
    assert "quantum RTS=MFP #0" in failed
    assert not any(name.startswith("classical") for name in failed)


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "qsmooth", "presets", "list"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "fig1-top" in proc.stdout
