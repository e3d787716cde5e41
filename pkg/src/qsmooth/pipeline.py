"""End-to-end scenario runs: simulation, estimators, CSV/JSON outputs and manifest."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ScenarioConfig
from .quantum import (
    build_halo,
    classical_smooth,
    quantum_filter,
    quantum_mfp_smooth,
    quantum_rts_smooth,
    simulate_true_state,
)
from .rng import GENERATOR_NAME
from .steady_state import check_differentiability, quadratic_variation

OUTPUT_ROOT_ENV = "QSMOOTH_OUTPUT_ROOT"

CSV_COLUMNS = (
    "t", "q_T", "p_T", "q_F", "p_F", "q_S", "p_S", "q_Scl", "p_Scl",
    "Vt_qq", "Vt_qp", "Vt_pp", "Vf_qq", "Vf_qp", "Vf_pp", "Vs_qq", "Vs_qp", "Vs_pp",
    "halo_rank",
)

#: Fraction of the run after which the smoothness window starts.
QV_WINDOW_START = 0.6


@dataclass(frozen=True)
class RunManifest:
    config: dict
    matrices: dict
    seed: int
    grid: dict
    version: str
    rng: dict
    files: dict

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "matrices": self.matrices,
            "seed": self.seed,
            "grid": self.grid,
            "version": self.version,
            "rng": self.rng,
            "files": self.files,
        }


def output_dir(config: ScenarioConfig, root=None) -> Path:
    """Run directory: ``outputs.directory`` resolved against ``root`` or ``$QSMOOTH_OUTPUT_ROOT``."""
    path = Path(config.outputs["directory"])
    if path.is_absolute():
        return path
    root = root if root is not None else os.environ.get(OUTPUT_ROOT_ENV, ".")
    return Path(root) / path


def estimate(config: ScenarioConfig) -> dict:
    """Run every configured estimator on one seeded trajectory; returns the arrays."""
    model = config.derived_model()
    x0, V0 = config.initial_state()
    run = config.run
    true_run = simulate_true_state(model, x0, V0, run["dt"], run["T"], rng_seed=run["seed"])
    filtered = quantum_filter(model, true_run.y_o, x0, V0)
    out = {"model": model, "true": true_run, "filtered": filtered}
    est = config.outputs["estimators"]
    if "quantum_rts" in est or "quantum_mfp" in est:
        halo = build_halo(model, filtered, true_run)
        if "quantum_rts" in est:
            out["quantum_rts"] = quantum_rts_smooth(model, halo, filtered, true_run)
        if "quantum_mfp" in est:
            out["quantum_mfp"] = quantum_mfp_smooth(model, halo, filtered, true_run)
    if "classical_rts" in est:
        out["classical_rts"] = classical_smooth(model, filtered, true_run.y_o)
    return out


def _smoothed(results: dict):
    if "quantum_rts" in results:
        return results["quantum_rts"]
    return results.get("quantum_mfp")


def trajectory_table(results: dict) -> np.ndarray:
    """Rows in :data:`CSV_COLUMNS` order; multi-mode runs report their first mode."""
    true_run, filtered = results["true"], results["filtered"]
    n = len(true_run.times)
    nan2 = np.full((n, 2), np.nan)
    nan22 = np.full((n, 2, 2), np.nan)
    smoothed = _smoothed(results)
    classical = results.get("classical_rts")
    xs = smoothed.means[:, :2] if smoothed is not None else nan2
    Vs = smoothed.covs[:, :2, :2] if smoothed is not None else nan22
    ranks = smoothed.ranks if smoothed is not None else np.full(n, np.nan)
    xcl = classical.means[:, :2] if classical is not None else nan2

    def tri(V):
        return np.stack([V[:, 0, 0], V[:, 0, 1], V[:, 1, 1]], axis=1)

    return np.column_stack([
        true_run.times, true_run.means[:, :2], filtered.means[:, :2], xs, xcl,
        tri(true_run.covs), tri(filtered.covs), tri(Vs), ranks,
    ])


def write_csv(path: Path, table: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(CSV_COLUMNS)
        for row in table:
            cells = ["%.17g" % v for v in row[:-1]]
            cells.append("nan" if np.isnan(row[-1]) else str(int(row[-1])))
            writer.writerow(cells)


def smoothness_summary(results: dict, window) -> dict:
    """Quadratic variations of the filtered and smoothed means over ``window``."""
    times = results["true"].times
    qv_f = quadratic_variation(results["filtered"].means, times, window)
    summary = {"window": list(window), "filtered": qv_f.tolist()}
    for key, traj in (("smoothed", _smoothed(results)), ("classical_rts", results.get("classical_rts"))):
        if traj is None:
            continue
        qv = quadratic_variation(traj.means, times, window)
        summary[key] = qv.tolist()
        summary[f"{key}_ratio"] = (qv.sum() / qv_f.sum()) if qv_f.sum() > 0 else None
    return summary


def analyze(config: ScenarioConfig) -> dict:
    """Steady-state differentiability report for a scenario."""
    model = config.derived_model()
    _, V0 = config.initial_state()
    return check_differentiability(model, V0=V0).to_dict()


def sweep_g(config: ScenarioConfig, values) -> list:
    """:func:`analyze` over preset squeezing parameters."""
    return [{"g": float(g), **analyze(config.with_g(g))} for g in values]


def run_scenario(config: ScenarioConfig, root=None) -> RunManifest:
    """Simulate, estimate and write ``trajectory.csv``, ``report.json`` and ``manifest.json``."""
    model = config.derived_model()
    if config.outputs["report"]:
        report = analyze(config)  # divergence surfaces before any output is written
    results = estimate(config)
    directory = output_dir(config, root)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    if config.outputs["csv"]:
        path = directory / "trajectory.csv"
        write_csv(path, trajectory_table(results))
        files["trajectory"] = str(path)
    if config.outputs["report"]:
        T = config.run["T"]
        report["smoothness"] = smoothness_summary(results, (QV_WINDOW_START * T, T))
        path = directory / "report.json"
        path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        files["report"] = str(path)
    steps = len(results["true"].times) - 1
    manifest = RunManifest(
        config=config.to_dict(),
        matrices={
            "A": model.A.tolist(), "D": model.D.tolist(),
            "C_o": model.C_o.tolist(), "C_u": model.C_u.tolist(),
            "Gamma_o": model.Gamma_o.tolist(), "Gamma_u": model.Gamma_u.tolist(),
        },
        seed=config.run["seed"],
        grid={"dt": config.run["dt"], "T": config.run["T"], "steps": steps},
        version=__version__,
        rng={"generator": GENERATOR_NAME, "seed_sequence": [config.run["seed"], 0],
             "layout": "standard normals (steps, 2K), observed record first"},
        files=files,
    )
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest
