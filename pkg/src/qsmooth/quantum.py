"""Moment equations for linear Gaussian quantum (LGQ) state estimation.

Two observers monitor the same system: the observed record ``o`` is
available to the estimator, the unobserved record ``u`` is not.  The *true*
state conditions on both past records; the *smoothed* state averages true
states over the unobserved record given the whole observed record.

The smoothed state is built from classical estimates of the true mean
("halo" quantities).  The halo filter is ``(<x>_F, V_F - V_T)``; the halo
dynamics have drift ``A``, diffusion ``sum_r K_r K_r^T`` and observed-record
cross-correlation ``K_o^T``, where ``K_r = V_T C_r^T + Gamma_r^T``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .classical import (
    ClassicalModel,
    MeasurementRecord,
    StateTrajectory,
    grid,
    kalman_filter,
    mfp_combine,
    retrofilter,
    rts_smooth,
)
from .errors import GridMismatchError, InvalidDimensionError, UncertaintyViolationError
from .gaussian_linalg import (
    EIG_RTOL,
    PSD_TOL,
    batch_pseudo_inverse,
    check_uncertainty,
    default_eig_tol,
    symmetrize,
    uncertainty_margins,
)
from .model_builder import DerivedModel
from .rng import standard_normals

log = logging.getLogger(__name__)

#: Ratio between the rank-up and rank-down eigenvalue thresholds of the halo covariance.
RANK_HYSTERESIS = 10.0
#: Largest ``dt |D_bar f| / lambda`` for which an eigen-direction of the halo covariance is kept.
STIFFNESS_LIMIT = 1.0


@dataclass(frozen=True)
class TrueStateRun:
    times: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    y_o: MeasurementRecord
    y_u: MeasurementRecord
    dw_o: np.ndarray
    dw_u: np.ndarray
    rng_seed: int | None = None

    @property
    def trajectory(self) -> StateTrajectory:
        return StateTrajectory(self.times, self.means, self.covs)


@dataclass(frozen=True)
class HaloModel:
    """Time-indexed halo-system matrices."""

    A_bar: np.ndarray
    D_bar: np.ndarray
    EE: np.ndarray
    Gamma_bar: np.ndarray


@dataclass(frozen=True)
class HaloFilter(StateTrajectory):
    """Filtered estimate of the true mean: ``<x>_F`` and ``V_F - V_T``."""


@dataclass(frozen=True)
class SmoothedQuantumState(StateTrajectory):
    ranks: np.ndarray = None
    Q: np.ndarray = None
    raw_initial_mean: np.ndarray = None
    raw_initial_cov: np.ndarray = None


def observed_model(model: DerivedModel, record: str = "o") -> ClassicalModel:
    """Single-record classical view ``(A, D, C_r, Gamma_r)`` of the LGQ model."""
    return ClassicalModel(model.A, model.D, model.C(record), model.Gamma(record))


def true_covariance(model: DerivedModel, V0, dt: float, steps: int) -> np.ndarray:
    """Euler solution of the true-state covariance equation (both records)."""
    A, At, D = model.A, model.A.T, model.D
    C = np.vstack([model.C_o, model.C_u])
    Gt = np.vstack([model.Gamma_o, model.Gamma_u]).T
    Ct = C.T
    covs = np.empty((steps + 1, model.dim, model.dim))
    V = symmetrize(np.asarray(V0, dtype=float))
    covs[0] = V
    for k in range(steps):
        K = V @ Ct + Gt
        V = V + (A @ V + V @ At + D - K @ K.T) * dt
        V = 0.5 * (V + V.T)
        covs[k + 1] = V
    return covs


def _gains(model: DerivedModel, covs: np.ndarray, record: str) -> np.ndarray:
    return covs @ model.C(record).T + model.Gamma(record).T


def _check_initial(model: DerivedModel, x0, V0):
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    V0 = np.asarray(V0, dtype=float)
    if x0.size != model.dim or V0.shape != (model.dim, model.dim):
        raise InvalidDimensionError("initial state does not match model dimension")
    if not check_uncertainty(V0, model.hbar):
        raise UncertaintyViolationError("initial covariance violates the uncertainty relation")
    return x0, V0


def simulate_true_state(model: DerivedModel, x0, V0, dt: float, T: float, rng_seed: int = 0,
                        normals=None) -> TrueStateRun:
    """Euler-Maruyama simulation of the true mean with both measurement records.

    The innovations ``dw_o`` and ``dw_u`` are independent Wiener increments;
    the records are ``y_r dt = C_r <x>_T dt + dw_r``.  ``normals`` of shape
    ``(steps, 2K)`` (observed columns first) replaces the seeded draws.
    """
    x0, V0 = _check_initial(model, x0, V0)
    steps, times = grid(dt, T)
    K = model.C_o.shape[0]
    if normals is None:
        normals = standard_normals(rng_seed, steps, 2 * K)
    if normals.shape != (steps, 2 * K):
        raise InvalidDimensionError(f"normals must have shape {(steps, 2 * K)}")
    sq = np.sqrt(dt)
    dw_o = sq * normals[:, :K]
    dw_u = sq * normals[:, K:]

    covs = true_covariance(model, V0, dt, steps)
    K_o = _gains(model, covs, "o")
    K_u = _gains(model, covs, "u")
    A = model.A
    means = np.empty((steps + 1, model.dim))
    x = x0.copy()
    means[0] = x
    for k in range(steps):
        x = x + (A @ x) * dt + K_o[k] @ dw_o[k] + K_u[k] @ dw_u[k]
        means[k + 1] = x
    y_o = means[:-1] @ model.C_o.T * dt + dw_o
    y_u = means[:-1] @ model.C_u.T * dt + dw_u
    return TrueStateRun(
        times, means, covs, MeasurementRecord(y_o, dt), MeasurementRecord(y_u, dt),
        dw_o, dw_u, rng_seed if normals is None else None,
    )


def quantum_filter(model: DerivedModel, y_o: MeasurementRecord, x0, V0, check: bool = True) -> StateTrajectory:
    """Filtered LGQ moments: the Kalman-Bucy engine fed ``(A, D, C_o, Gamma_o)``."""
    x0, V0 = _check_initial(model, x0, V0)
    traj = kalman_filter(observed_model(model), y_o, x0, V0)
    if check:
        margins = uncertainty_margins(traj.covs, model.hbar)
        bad = np.flatnonzero(margins < -PSD_TOL)
        if bad.size:
            raise UncertaintyViolationError(
                f"filtered covariance violates the uncertainty relation at t={traj.times[bad[0]]:.6g}"
            )
    return traj


def build_halo(model: DerivedModel, filtered: StateTrajectory, true_run: TrueStateRun):
    """Halo-system matrices and the halo filter from stored forward passes."""
    if len(filtered) != len(true_run.times):
        raise GridMismatchError("filtered and true-state grids differ")
    V_T = true_run.covs
    K_o = _gains(model, V_T, "o")
    K_u = _gains(model, V_T, "u")
    EE = K_o @ np.swapaxes(K_o, -1, -2) + K_u @ np.swapaxes(K_u, -1, -2)
    Gamma_bar = np.swapaxes(K_o, -1, -2)
    A_bar = model.A - K_o @ model.C_o
    D_bar = symmetrize(EE - K_o @ Gamma_bar)
    halo_model = HaloModel(A_bar, D_bar, EE, Gamma_bar)
    halo_filter = HaloFilter(filtered.times, filtered.means.copy(), symmetrize(filtered.covs - V_T))
    return halo_model, halo_filter


def halo_classical_model(model: DerivedModel, halo_model: HaloModel) -> ClassicalModel:
    """The halo system as a (time-varying) classical model driven by the observed record."""
    return ClassicalModel(model.A, halo_model.EE, model.C_o, halo_model.Gamma_bar)


def halo_ranks(halo_covs: np.ndarray, D_bar=None, dt: float | None = None,
               eig_rtol: float = EIG_RTOL, hysteresis: float = RANK_HYSTERESIS):
    """Rank of the halo covariance at each grid point, decided backward in time.

    Eigen-directions ``f_i`` are taken in order of decreasing eigenvalue.  A
    direction is kept while ``lambda_i`` exceeds its threshold and is only
    regained once ``lambda_i`` exceeds ``hysteresis`` times the threshold.
    The threshold is ``eig_rtol * max(|lambda|max, 1)``; when ``D_bar`` and
    ``dt`` are given it is raised to ``dt * |D_bar f_i|``, so a kept direction
    never contributes a ``D_bar Vh^+`` column larger than ``1/dt`` to an
    explicit step.
    """
    halo_covs = symmetrize(np.asarray(halo_covs, dtype=float))
    lam, vecs = np.linalg.eigh(halo_covs)
    lam, vecs = lam[:, ::-1], vecs[:, :, ::-1]
    base = np.broadcast_to((default_eig_tol(lam) * (eig_rtol / EIG_RTOL))[:, None], lam.shape)
    if D_bar is not None and dt is not None:
        stiff = dt * np.linalg.norm(np.asarray(D_bar) @ vecs, axis=-2) / STIFFNESS_LIMIT
        base = np.maximum(base, stiff)
    keep = np.cumprod(np.abs(lam) > base, axis=-1).sum(axis=-1)
    gain = np.cumprod(np.abs(lam) > hysteresis * base, axis=-1).sum(axis=-1)
    ranks = np.empty(len(lam), dtype=int)
    r = keep[-1]
    for k in range(len(lam) - 1, -1, -1):
        r = min(max(r, gain[k]), keep[k])
        ranks[k] = r
    return ranks


def smoothing_q(model: DerivedModel, V_T, halo_pinv, D_bar):
    """Inhomogeneous term of the smoothed-covariance equation (stacked over the grid)."""
    C_o, G_o = model.C_o, model.Gamma_o
    VC = V_T @ C_o.T
    DVT = D_bar @ halo_pinv @ V_T
    Q = (model.D - G_o.T @ G_o + VC @ np.swapaxes(VC, -1, -2)
         - DVT - np.swapaxes(DVT, -1, -2) - 2.0 * D_bar)
    return Q


def _project_null(x, V, x_ref, V_T, basis, rank):
    """Collapse the halo null space: mean components to ``x_ref``, excess covariance to zero."""
    kept = basis[:rank]
    proj = kept.T @ kept
    x = x_ref + proj @ (x - x_ref)
    W = proj @ (V - V_T) @ proj
    return x, symmetrize(W) + V_T


def quantum_rts_smooth(model: DerivedModel, halo, filtered: StateTrajectory, true_run: TrueStateRun,
                       eig_rtol: float = EIG_RTOL, hysteresis: float = RANK_HYSTERESIS) -> SmoothedQuantumState:
    """Backward (RTS-form) integration of the smoothed quantum state.

    ::

        d<x>_S  = A <x>_S dt + Db Vh^+ (<x>_S - <x>_F) dt + K_o[V_T] (y_o dt - C_o <x>_S dt)
        dV_S/dt = (Ab + Db Vh^+) V_S + V_S (Ab + Db Vh^+)^T + Q

    from ``(<x>_F(T), V_F(T))``, with ``Vh = V_F - V_T`` the halo covariance.
    Wherever ``Vh`` is rank deficient the smoothed state is collapsed onto its
    support: null-space mean components take the filtered value (exact there,
    since the halo filter carries no uncertainty) and ``V_S - V_T`` is
    projected onto the kept directions.  The unprojected value
    reached at the initial time is kept in ``raw_initial_mean``/``raw_initial_cov``.
    """
    halo_model, halo_filter = halo
    y_o = true_run.y_o
    n = len(filtered)
    if n != len(true_run.times) or n != y_o.steps + 1 or n != len(halo_filter):
        raise GridMismatchError("smoother inputs do not share a grid")
    dt = y_o.dt
    dy = y_o.increments
    V_T = true_run.covs
    x_T = true_run.means
    x_F = filtered.means

    ranks = halo_ranks(halo_filter.covs, halo_model.D_bar, dt, eig_rtol, hysteresis)
    pinv, _, bases, _ = batch_pseudo_inverse(halo_filter.covs, ranks=ranks)
    D_bar = halo_model.D_bar
    DV = D_bar @ pinv
    M = halo_model.A_bar + DV
    MT = np.swapaxes(M, -1, -2)
    Q = smoothing_q(model, V_T, pinv, D_bar)
    K_o = np.swapaxes(halo_model.Gamma_bar, -1, -2)
    A, C_o = model.A, model.C_o
    dim = model.dim

    means = np.empty_like(x_F)
    covs = np.empty_like(filtered.covs)
    means[-1] = x_F[-1]
    covs[-1] = filtered.covs[-1]
    x, V = means[-1].copy(), covs[-1].copy()
    raw_x = raw_V = None
    rank_changes = 0
    for k in range(n - 2, -1, -1):
        j = k + 1
        dw = dy[k] - (C_o @ x) * dt
        x = x - ((A @ x + DV[j] @ (x - x_F[j])) * dt + K_o[j] @ dw)
        V = V - (M[j] @ V + V @ MT[j] + Q[j]) * dt
        V = 0.5 * (V + V.T)
        if k == 0:
            raw_x, raw_V = x.copy(), V.copy()
        if ranks[k] < dim:
            x, V = _project_null(x, V, x_F[k], V_T[k], bases[k], ranks[k])
        if ranks[k] != ranks[j]:
            rank_changes += 1
        means[k], covs[k] = x, V
    if rank_changes:
        log.debug("halo covariance rank changed %d times along the grid", rank_changes)
    return SmoothedQuantumState(filtered.times, means, covs, ranks=ranks, Q=Q,
                                raw_initial_mean=raw_x, raw_initial_cov=raw_V)


def quantum_mfp_smooth(model: DerivedModel, halo, filtered: StateTrajectory,
                       true_run: TrueStateRun) -> SmoothedQuantumState:
    """Two-filter form: halo retrofilter fused with the halo filter, plus ``V_T``."""
    halo_model, halo_filter = halo
    if len(filtered) != len(true_run.times) or len(halo_filter) != len(filtered):
        raise GridMismatchError("smoother inputs do not share a grid")
    retro = retrofilter(halo_classical_model(model, halo_model), true_run.y_o)
    halo_smoothed = mfp_combine(halo_filter, retro)
    return SmoothedQuantumState(
        filtered.times, halo_smoothed.means, halo_smoothed.covs + true_run.covs,
        ranks=halo_ranks(halo_filter.covs, halo_model.D_bar, true_run.y_o.dt),
    )


def classical_smooth(model: DerivedModel, filtered: StateTrajectory, y_o: MeasurementRecord) -> StateTrajectory:
    """Classical RTS smoother applied naively with the observed record's ``C_o`` and ``Gamma_o``."""
    return rts_smooth(observed_model(model), filtered, y_o)


def true_state_ensemble(model: DerivedModel, x0, V0, dt: float, T: float, seeds, sample_indices,
                        chunk: int = 50):
    """Vectorised ensemble of true-state runs with the quantum filter on each record.

    Member ``i`` reproduces ``simulate_true_state(..., rng_seed=seeds[i])``.
    Returns ``(x_T samples (n_seeds, n_samples, d), innovations (n_seeds, steps, K))``
    where the innovations are the filter's ``y_o dt - C_o <x>_F dt``; to save
    memory only their per-seed sums of values and squares are kept:
    ``(sum, sum_sq)`` each of shape ``(n_seeds, K)``.
    """
    x0, V0 = _check_initial(model, x0, V0)
    steps, _ = grid(dt, T)
    K = model.C_o.shape[0]
    d = model.dim
    sample_indices = np.asarray(sample_indices, dtype=int)
    covs_T = true_covariance(model, V0, dt, steps)
    K_o = _gains(model, covs_T, "o")
    K_u = _gains(model, covs_T, "u")
    covs_F = kalman_filter(observed_model(model), MeasurementRecord(np.zeros((steps, K)), dt), x0, V0).covs
    K_F = _gains(model, covs_F, "o")
    A, C_o, C_u = model.A, model.C_o, model.C_u

    seeds = list(seeds)
    samples = np.empty((len(seeds), sample_indices.size, d))
    inn_sum = np.zeros((len(seeds), K))
    inn_sq = np.zeros((len(seeds), K))
    sq = np.sqrt(dt)
    for start in range(0, len(seeds), chunk):
        batch = seeds[start:start + chunk]
        noise = np.stack([standard_normals(s, steps, 2 * K) for s in batch], axis=1) * sq
        b = len(batch)
        x = np.tile(x0, (b, 1))
        xf = np.tile(x0, (b, 1))
        pos = {int(k): i for i, k in enumerate(sample_indices)}
        out = samples[start:start + b]
        if 0 in pos:
            out[:, pos[0]] = x
        for k in range(steps):
            dw_o = noise[k, :, :K]
            dy = x @ C_o.T * dt + dw_o
            inn = dy - xf @ C_o.T * dt
            inn_sum[start:start + b] += inn
            inn_sq[start:start + b] += inn * inn
            xf = xf + xf @ A.T * dt + inn @ K_F[k].T
            x = x + x @ A.T * dt + dw_o @ K_o[k].T + noise[k, :, K:] @ K_u[k].T
            if k + 1 in pos:
                out[:, pos[k + 1]] = x
    return samples, (inn_sum, inn_sq)
