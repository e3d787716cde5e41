"""Acceptance battery: one PASS/FAIL line per criterion, tolerances pinned below.

Runs at the production grid (dt = 1e-4, T = 2) and takes a few minutes.
"""

import numpy as np
import pytest
from scipy.linalg import expm

from qsmooth.model_builder import build_derived_model, fig1_bottom, fig1_top, preset_initial_state
from qsmooth.oracles import (
    classical_equivalence,
    halo_identity,
    quantum_equivalence,
    quantum_pipeline,
    random_classical_model,
    random_lgq_model,
    t0_coincidence,
    uncertainty_audit,
)
from qsmooth.quantum import classical_smooth, true_covariance, true_state_ensemble
from qsmooth.steady_state import check_differentiability, onset_time, quadratic_variation

DT, T = 1e-4, 2.0
N_RANDOM = 20
SEED = 0

HALO_TOL = 1e-6
GAIN_TOL = 1e-6
GAP_MIN = 1e-2
ONSET_TOL = 1e-6
ONSET_WINDOW = (0.5, 1.5)
QV_WINDOW = (1.2, 2.0)
QV_SMOOTH_MAX = 1e-3
QV_ROUGH_MIN = 0.1
T0_TOL = 1e-4
N_ENSEMBLE = 1000
N_SIGMA = 3.0

PRESETS = {"fig1-top": (fig1_top, 1.0), "fig1-bottom": (fig1_bottom, 0.1)}


def preset(name):
    builder, g = PRESETS[name]
    x0, V0 = preset_initial_state(g)
    return build_derived_model(*builder()), x0, V0


@pytest.fixture(scope="module")
def preset_runs():
    out = {}
    for name in PRESETS:
        model, x0, V0 = preset(name)
        out[name] = (model, x0, V0, quantum_pipeline(model, x0, V0, DT, T, rng_seed=SEED))
    return out


def record(log, n, title, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {n}: {title} | {detail}"
    log.append(line)
    print(line)
    assert passed, line


def _worst(reports, key):
    return max(reports, key=lambda r: r[key])


def _summary(reports):
    failed = [r["name"] for r in reports if not r["passed"]]
    mg, cg = _worst(reports, "mean_gap_rel"), _worst(reports, "cov_gap")
    ratio = min(min(r["mean_ratio"], r["cov_ratio"]) for r in reports)
    return (f"{len(reports) - len(failed)}/{len(reports)} pass; worst mean gap {mg['mean_gap_rel']:.3g} "
            f"({mg['name']}), worst cov gap {cg['cov_gap']:.3g} ({cg['name']}), min halving ratio {ratio:.3g}"
            + (f"; failing: {', '.join(failed)}" if failed else ""))


def test_criterion_01_classical_rts_equals_mfp(acceptance_log):
    reports = []
    for seed in range(N_RANDOM):
        model, x0, V0 = random_classical_model(seed)
        reports.append(classical_equivalence(model, x0, V0, DT, T, seed, name=f"random #{seed}"))
    record(acceptance_log, 1, "classical RTS = MFP", all(r["passed"] for r in reports), _summary(reports))


def test_criterion_02_quantum_rts_equals_mfp(acceptance_log):
    reports = []
    for seed in range(N_RANDOM):
        sys, unr, x0, V0 = random_lgq_model(seed)
        reports.append(quantum_equivalence(build_derived_model(sys, unr), x0, V0, DT, T, SEED,
                                           name=f"random #{seed}"))
    for name in PRESETS:
        model, x0, V0 = preset(name)
        reports.append(quantum_equivalence(model, x0, V0, DT, T, SEED, name=name))
    record(acceptance_log, 2, "quantum RTS = MFP", all(r["passed"] for r in reports), _summary(reports))


def test_criterion_03_halo_identity(acceptance_log):
    model, x0, V0 = preset("fig1-top")
    r = halo_identity(model, x0, V0, DT, T, SEED)
    passed = r["mean_err"] <= HALO_TOL and r["cov_err"] <= HALO_TOL
    record(acceptance_log, 3, "halo identity on fig1-top", passed,
           f"mean err {r['mean_err']:.3g}, cov err {r['cov_err']:.3g} (tol {HALO_TOL:g})")


def test_criterion_04_uncertainty_audits(acceptance_log, preset_runs):
    details, passed = [], True
    for name, (model, _, _, run) in preset_runs.items():
        r = uncertainty_audit(model, run, name)
        passed &= r["passed"]
        details.append(f"{name}: " + ", ".join(f"{k} {v:.3g}" for k, v in r["margins"].items()))
    record(acceptance_log, 4, "uncertainty and PSD audits (tol -1e-10)", passed, "; ".join(details))


def test_criterion_05_differentiability_condition(acceptance_log):
    top, _, V0_top = preset("fig1-top")
    bottom, _, V0_bottom = preset("fig1-bottom")
    r_top = check_differentiability(top, V0=V0_top)
    r_bottom = check_differentiability(bottom, V0=V0_bottom)
    passed = (r_top.condition_met and r_top.gain_norm < GAIN_TOL
              and not r_bottom.condition_met and r_bottom.covariance_gap > GAP_MIN)
    record(acceptance_log, 5, "steady-state differentiability condition", passed,
           f"fig1-top met={r_top.condition_met} gain {r_top.gain_norm:.3g}; "
           f"fig1-bottom met={r_bottom.condition_met} gap {r_bottom.covariance_gap:.3g}")


def test_criterion_06_steady_state_onset(acceptance_log):
    model, _, V0 = preset("fig1-top")
    horizon = 5.0
    steps = int(round(horizon / DT))
    covs = true_covariance(model, V0, DT, steps)
    t_on = onset_time(model, covs, DT * np.arange(steps + 1), tol=ONSET_TOL)
    passed = ONSET_WINDOW[0] <= t_on <= ONSET_WINDOW[1]
    record(acceptance_log, 6, "fig1-top steady-state onset", passed,
           f"first |dV_T/dt|_F < {ONSET_TOL:g} at t = {t_on:.4g}, window {list(ONSET_WINDOW)}")


def test_criterion_07_smoothness_statistic(acceptance_log, preset_runs):
    ratios = {}
    for name, (model, _, _, run) in preset_runs.items():
        times = run["filtered"].times
        qv_f = quadratic_variation(run["filtered"].means, times, QV_WINDOW).sum()
        qv_s = quadratic_variation(run["rts"].means, times, QV_WINDOW).sum()
        classical = classical_smooth(model, run["filtered"], run["true"].y_o)
        qv_c = quadratic_variation(classical.means, times, QV_WINDOW).sum()
        ratios[name] = (qv_s / qv_f, qv_c / qv_f)
    passed = (ratios["fig1-top"][0] < QV_SMOOTH_MAX
              and ratios["fig1-bottom"][0] > QV_ROUGH_MIN
              and ratios["fig1-bottom"][1] < QV_SMOOTH_MAX)
    record(acceptance_log, 7, "quadratic-variation ratios over [1.2, 2.0]", passed,
           f"fig1-top quantum {ratios['fig1-top'][0]:.3g}; fig1-bottom quantum {ratios['fig1-bottom'][0]:.3g}, "
           f"classical {ratios['fig1-bottom'][1]:.3g}")


def test_criterion_08_t0_coincidence(acceptance_log):
    details, passed = [], True
    for name in PRESETS:
        model, x0, V0 = preset(name)
        r = t0_coincidence(model, x0, V0, DT, T, SEED, tol=T0_TOL)
        passed &= r["passed"]
        details.append(f"{name}: error {r['error']:.3g}, raw defect {r['defect']:.3g} -> "
                       f"{r['defect_half_dt']:.3g} at dt/2 (ratio {r['defect_ratio']:.3g})")
    record(acceptance_log, 8, "t0 coincidence", passed, "; ".join(details))


def test_criterion_09_terminal_condition(acceptance_log, preset_runs):
    passed = True
    for _, (_, _, _, run) in preset_runs.items():
        rts, f = run["rts"], run["filtered"]
        passed &= np.array_equal(rts.means[-1], f.means[-1]) and np.array_equal(rts.covs[-1], f.covs[-1])
    record(acceptance_log, 9, "terminal condition", passed, "bitwise equality of mean and covariance at T on both presets")


def test_criterion_10_monte_carlo_moments(acceptance_log):
    model, x0, V0 = preset("fig1-top")
    steps = int(round(T / DT))
    idx = np.linspace(steps // 10, steps, 10).astype(int)
    samples, (inn_sum, inn_sq) = true_state_ensemble(model, x0, V0, DT, T, range(N_ENSEMBLE), idx)

    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(N_ENSEMBLE)
    expected = np.array([expm(model.A * DT * k) @ x0 for k in idx])
    mean_ok = np.all(np.abs(mean - expected) <= N_SIGMA * se)

    # pooled over seeds and steps; sd of the sample variance of N(0, dt) is dt sqrt(2/n)
    n = N_ENSEMBLE * steps
    var = inn_sq.sum(axis=0) / n - (inn_sum.sum(axis=0) / n) ** 2
    z_var = np.abs(var - DT) / (DT * np.sqrt(2.0 / n))
    var_ok = np.all(z_var <= N_SIGMA)
    z_mean = np.max(np.abs(mean - expected) / np.where(se > 0, se, np.inf))
    record(acceptance_log, 10, "Monte Carlo moments over 1000 seeds", bool(mean_ok and var_ok),
           f"max mean z {z_mean:.3g} over 10 times; innovation variance z {np.round(z_var, 3).tolist()}")
