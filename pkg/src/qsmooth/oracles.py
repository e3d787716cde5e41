"""Cross-oracle checks and audits shared by the test-suite and the ``oracle`` CLI.

Each check returns a plain dict with at least ``name``, ``passed`` and the
measured margins, so results can be dumped straight to JSON.
"""

from __future__ import annotations

import numpy as np

from .classical import (
    ClassicalModel,
    innovations,
    kalman_filter,
    mfp_combine,
    retrofilter,
    rts_smooth,
    simulate_langevin,
)
from .gaussian_linalg import PSD_TOL, min_eigenvalues, symplectic_form, uncertainty_margins
from .model_builder import (
    LgqSystemSpec,
    UnravellingSpec,
    build_derived_model,
    drift_and_diffusion,
    homodyne_unravelling,
    validate_unravelling,
)
from .quantum import (
    build_halo,
    halo_classical_model,
    quantum_filter,
    quantum_mfp_smooth,
    quantum_rts_smooth,
    simulate_true_state,
    smoothing_q,
)
from .rng import coarsen_normals, make_rng, standard_normals

#: Relative tolerance on the smoothed-mean gap (times the path scale).
MEAN_GAP_RTOL = 1e-3
#: Absolute tolerance on the smoothed-covariance gap.
COV_GAP_TOL = 1e-3
#: Minimum gap reduction when dt is halved.
MIN_HALVING_RATIO = 1.8
#: Tolerance of the halo-filter identity.
HALO_TOL = 1e-6

_RANDOM_STREAM = 7


def _finite(x):
    return float(x) if np.isfinite(x) else None


def random_classical_model(seed: int, dim: int = 2, n_meas: int = 2):
    """Random stable model with O(1) scales: ``(model, x0, V0)``.

    ``A`` is a perturbed ``-I``, ``D = E E^T`` and ``Gamma^T = E R`` with
    ``|R|_2 = 0.8`` so the joint noise covariance stays positive definite.
    """
    rng = make_rng(seed, _RANDOM_STREAM)
    A = 0.5 * rng.standard_normal((dim, dim)) - np.eye(dim)
    while np.max(np.linalg.eigvals(A).real) >= -0.1:
        A = 0.5 * rng.standard_normal((dim, dim)) - np.eye(dim)
    E = rng.standard_normal((dim, dim))
    R = rng.standard_normal((dim, n_meas))
    R *= 0.8 / np.linalg.norm(R, 2)
    C = rng.standard_normal((n_meas, dim))
    model = ClassicalModel(A, E @ E.T, C, (E @ R).T)
    x0 = 3.0 * rng.standard_normal(dim)
    return model, x0, np.eye(dim)


def random_lgq_model(seed: int, n_channels: int = 2, hbar: float = 2.0):
    """Random valid single-mode LGQ model: ``(system, unravelling, x0, V0)``.

    Both observers get nonzero homodyne efficiency on every channel, the
    drift is stable and ``V0`` is a thermal squeezed state.
    """
    rng = make_rng(seed, _RANDOM_STREAM + 1)
    while True:
        G = rng.standard_normal((2, 2)) * 0.5
        G = 0.5 * (G + G.T)
        B = (rng.standard_normal((n_channels, 2)) + 1j * rng.standard_normal((n_channels, 2))) * 0.6
        sys = LgqSystemSpec(n_modes=1, hbar=hbar, G=G, B=B)
        A, _, _ = drift_and_diffusion(sys)
        if np.max(np.linalg.eigvals(A).real) < -0.1:
            break
    total = rng.uniform(0.5, 1.0, n_channels)
    split = rng.uniform(0.2, 0.8, n_channels)
    unr = UnravellingSpec(
        M_o=homodyne_unravelling(total * split, rng.uniform(0, np.pi, n_channels)),
        M_u=homodyne_unravelling(total * (1 - split), rng.uniform(0, np.pi, n_channels)),
    )
    assert validate_unravelling(unr).ok
    r = rng.uniform(-0.5, 0.5)
    phi = rng.uniform(0, np.pi)
    rot = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
    S = rot @ np.diag([np.exp(r), np.exp(-r)])
    V0 = 0.5 * hbar * rng.uniform(1.0, 2.0) * S @ S.T
    x0 = rng.standard_normal(2)
    return sys, unr, x0, V0


def _gap(a_means, a_covs, b_means, b_covs):
    scale = max(np.abs(b_means).max(), np.finfo(float).tiny)
    return np.abs(a_means - b_means).max() / scale, np.abs(a_covs - b_covs).max()


def _halving_report(name, fine, coarse, extra=None):
    mean_ratio = coarse[0] / fine[0] if fine[0] > 0 else np.inf
    cov_ratio = coarse[1] / fine[1] if fine[1] > 0 else np.inf
    passed = (
        coarse[0] <= MEAN_GAP_RTOL
        and coarse[1] <= COV_GAP_TOL
        and mean_ratio >= MIN_HALVING_RATIO
        and cov_ratio >= MIN_HALVING_RATIO
    )
    report = {
        "name": name,
        "passed": bool(passed),
        "mean_gap_rel": _finite(coarse[0]),
        "cov_gap": _finite(coarse[1]),
        "mean_gap_rel_half_dt": _finite(fine[0]),
        "cov_gap_half_dt": _finite(fine[1]),
        "mean_ratio": _finite(mean_ratio),
        "cov_ratio": _finite(cov_ratio),
    }
    if extra:
        report.update(extra)
    return report


def classical_gaps(model: ClassicalModel, x0, V0, dt: float, T: float, normals):
    """Relative mean gap and absolute covariance gap between RTS and MFP for one run."""
    _, _, record = simulate_langevin(model, x0, dt, T, normals=normals)
    filtered = kalman_filter(model, record, x0, V0)
    rts = rts_smooth(model, filtered, record)
    mfp = mfp_combine(filtered, retrofilter(model, record))
    return _gap(rts.means, rts.covs, mfp.means, mfp.covs)


def classical_equivalence(model: ClassicalModel, x0, V0, dt: float = 1e-4, T: float = 2.0, seed: int = 0,
                          name: str = "classical RTS=MFP"):
    """RTS vs MFP at ``dt`` and ``dt/2`` driven by the same Brownian path."""
    steps = int(round(T / dt))
    fine_normals = standard_normals(seed, 2 * steps, model.n_meas + model.dim)
    fine = classical_gaps(model, x0, V0, dt / 2, T, fine_normals)
    coarse = classical_gaps(model, x0, V0, dt, T, coarsen_normals(fine_normals))
    return _halving_report(name, fine, coarse, {"seed": seed})


def quantum_pipeline(model, x0, V0, dt: float, T: float, rng_seed: int = 0, normals=None):
    """True state, filter, halo and both smoothers on one grid."""
    true_run = simulate_true_state(model, x0, V0, dt, T, rng_seed=rng_seed, normals=normals)
    filtered = quantum_filter(model, true_run.y_o, x0, V0)
    halo = build_halo(model, filtered, true_run)
    rts = quantum_rts_smooth(model, halo, filtered, true_run)
    mfp = quantum_mfp_smooth(model, halo, filtered, true_run)
    return {"true": true_run, "filtered": filtered, "halo": halo, "rts": rts, "mfp": mfp}


def quantum_equivalence(model, x0, V0, dt: float = 1e-4, T: float = 2.0, seed: int = 0,
                        name: str = "quantum RTS=MFP"):
    """Quantum RTS vs MFP at ``dt`` and ``dt/2`` driven by the same Brownian path."""
    steps = int(round(T / dt))
    fine_normals = standard_normals(seed, 2 * steps, 2 * model.C_o.shape[0])
    gaps = []
    for h, normals in ((dt / 2, fine_normals), (dt, coarsen_normals(fine_normals))):
        run = quantum_pipeline(model, x0, V0, h, T, normals=normals)
        gaps.append(_gap(run["rts"].means, run["rts"].covs, run["mfp"].means, run["mfp"].covs))
    return _halving_report(name, gaps[0], gaps[1], {"seed": seed})


def halo_identity(model, x0, V0, dt: float = 1e-4, T: float = 2.0, seed: int = 0):
    """Classical Kalman-Bucy on the halo system against the quantum filter."""
    run = quantum_pipeline(model, x0, V0, dt, T, rng_seed=seed)
    halo_model, halo_filter = run["halo"]
    zero = np.zeros((model.dim, model.dim))
    classical = kalman_filter(halo_classical_model(model, halo_model), run["true"].y_o, x0, zero)
    mean_err = np.abs(classical.means - run["filtered"].means).max()
    cov_err = np.abs(classical.covs - halo_filter.covs).max()
    return {
        "name": "halo identity",
        "passed": bool(mean_err <= HALO_TOL and cov_err <= HALO_TOL),
        "mean_err": float(mean_err),
        "cov_err": float(cov_err),
        "seed": seed,
    }


def uncertainty_audit(model, run, name: str = "uncertainty audit"):
    """Uncertainty relation for V_T, V_F, V_S and PSD of V_F - V_T, V_S - V_T on every grid point."""
    V_T = run["true"].covs
    margins = {
        "V_T": uncertainty_margins(V_T, model.hbar).min(),
        "V_F": uncertainty_margins(run["filtered"].covs, model.hbar).min(),
        "V_S": uncertainty_margins(run["rts"].covs, model.hbar).min(),
        "V_F-V_T": min_eigenvalues(run["filtered"].covs - V_T).min(),
        "V_S-V_T": min_eigenvalues(run["rts"].covs - V_T).min(),
    }
    return {
        "name": name,
        "passed": bool(min(margins.values()) >= -PSD_TOL),
        "margins": {k: float(v) for k, v in margins.items()},
    }


def t0_coincidence(model, x0, V0, dt: float = 1e-4, T: float = 2.0, seed: int = 0, tol: float = 1e-4):
    """Smoother output at t0 and the halving of the raw backward defect with dt.

    The tolerance applies to the returned values; the defect is the distance of
    the unprojected backward state from ``(x0, V0)`` and only has to halve.
    """
    steps = int(round(T / dt))
    fine_normals = standard_normals(seed, 2 * steps, 2 * model.C_o.shape[0])
    out = []
    for h, normals in ((dt, coarsen_normals(fine_normals)), (dt / 2, fine_normals)):
        rts = quantum_pipeline(model, x0, V0, h, T, normals=normals)["rts"]
        err = max(np.abs(rts.means[0] - x0).max(), np.abs(rts.covs[0] - V0).max())
        defect = max(np.abs(rts.raw_initial_mean - x0).max(), np.abs(rts.raw_initial_cov - V0).max())
        out.append((err, defect))
    ratio = out[0][1] / out[1][1] if out[1][1] > 0 else np.inf
    return {
        "name": "t0 coincidence",
        "passed": bool(out[0][0] <= tol and ratio >= MIN_HALVING_RATIO),
        "error": float(out[0][0]),
        "defect": float(out[0][1]),
        "defect_half_dt": float(out[1][1]),
        "defect_ratio": _finite(ratio),
    }


def innovation_stats(C, filtered, record, n_sigma: float = 3.0):
    """Per-component sample mean and variance of ``y dt - C x_F dt`` against N(0, dt)."""
    dw = innovations(C, filtered, record)
    n, dt = dw.shape[0], record.dt
    mean = dw.mean(axis=0)
    var = dw.var(axis=0)
    mean_se = np.sqrt(dt / n)
    var_se = dt * np.sqrt(2.0 / n)
    z_mean = np.abs(mean) / mean_se
    z_var = np.abs(var - dt) / var_se
    return {
        "name": "innovation statistics",
        "passed": bool(np.all(z_mean <= n_sigma) and np.all(z_var <= n_sigma)),
        "z_mean": z_mean.tolist(),
        "z_var": z_var.tolist(),
    }


def corrupted_q(model, V_T, halo_pinv, D_bar):
    """``smoothing_q`` with the sign of its last term flipped; a mutation fixture."""
    return smoothing_q(model, V_T, halo_pinv, D_bar) + 4.0 * D_bar


def run_oracle_suite(n_seeds: int = 20, dt: float = 1e-4, T: float = 2.0):
    """Full battery on ``n_seeds`` random classical and LGQ models; returns a JSON-ready report."""
    checks = []
    for seed in range(n_seeds):
        model, x0, V0 = random_classical_model(seed)
        checks.append(classical_equivalence(model, x0, V0, dt, T, seed, name=f"classical RTS=MFP #{seed}"))
        sys, unr, qx0, qV0 = random_lgq_model(seed)
        qmodel = build_derived_model(sys, unr)
        checks.append(quantum_equivalence(qmodel, qx0, qV0, dt, T, seed, name=f"quantum RTS=MFP #{seed}"))
        run = quantum_pipeline(qmodel, qx0, qV0, dt, T, rng_seed=seed)
        checks.append(uncertainty_audit(qmodel, run, name=f"uncertainty audit #{seed}"))
        if seed == 0:
            checks.append(halo_identity(qmodel, qx0, qV0, dt, T, seed))
            checks.append(t0_coincidence(qmodel, qx0, qV0, dt, T, seed))
            _, _, record = simulate_langevin(model, x0, dt, 20.0, rng_seed=seed)
            checks.append(innovation_stats(model.C, kalman_filter(model, record, x0, V0), record))
    return {
        "passed": all(c["passed"] for c in checks),
        "n_seeds": n_seeds,
        "dt": dt,
        "T": T,
        "checks": checks,
    }
