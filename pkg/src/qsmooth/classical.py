"""Classical linear-Gaussian estimation in continuous time.

Dynamics ``dx = A x dt + E dv_p`` with measurement ``y dt = C x dt + dv_m``
and cross-correlation ``Gamma^T dt = E dv_p dv_m^T``.  Only ``D = E E^T`` and
``Gamma`` enter the estimators.  Every engine uses fixed-step Euler on one
shared uniform grid: forward passes evaluate at the earlier grid point,
backward passes at the later one.

``D`` and ``Gamma`` may be given per grid point (leading axis of length
``steps + 1``), which is how the halo system of the quantum smoother is fed
through the same code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, InvalidDimensionError, InvalidModelError
from .gaussian_linalg import GaussianState, PSD_TOL, batch_pseudo_inverse, min_eigenvalue
from .rng import standard_normals


@dataclass(frozen=True)
class ClassicalModel:
    A: np.ndarray
    D: np.ndarray
    C: np.ndarray
    Gamma: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        D = np.asarray(self.D, dtype=float)
        Gamma = np.asarray(self.Gamma, dtype=float)
        d, m = A.shape[0], C.shape[0]
        if A.shape != (d, d) or C.shape[1] != d:
            raise InvalidDimensionError(f"inconsistent A {A.shape} / C {C.shape}")
        if D.shape[-2:] != (d, d) or Gamma.shape[-2:] != (m, d):
            raise InvalidDimensionError(f"inconsistent D {D.shape} / Gamma {Gamma.shape}")
        for name, val in (("A", A), ("C", C), ("D", D), ("Gamma", Gamma)):
            object.__setattr__(self, name, val)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def n_meas(self) -> int:
        return self.C.shape[0]

    @property
    def time_varying(self) -> bool:
        return self.D.ndim == 3 or self.Gamma.ndim == 3

    def D_at(self, k: int) -> np.ndarray:
        return self.D[k] if self.D.ndim == 3 else self.D

    def Gamma_at(self, k: int) -> np.ndarray:
        return self.Gamma[k] if self.Gamma.ndim == 3 else self.Gamma

    def joint_noise_cov(self, k: int = 0) -> np.ndarray:
        """``[[D, Gamma^T], [Gamma, I]]``, the per-unit-time covariance of (E dv_p, dv_m)."""
        G = self.Gamma_at(k)
        return np.block([[self.D_at(k), G.T], [G, np.eye(self.n_meas)]])

    def check_noise(self) -> None:
        if self.time_varying:
            raise InvalidModelError("noise check needs constant D and Gamma")
        if min_eigenvalue(self.joint_noise_cov()) < -PSD_TOL * max(1.0, np.abs(self.D).max()):
            raise InvalidModelError("joint noise covariance is not positive semidefinite")


@dataclass(frozen=True)
class MeasurementRecord:
    """Measurement increments ``y dt`` on the uniform grid ``t0 + k dt``."""

    increments: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim == 1:
            inc = inc[:, None]
        object.__setattr__(self, "increments", inc)

    @property
    def steps(self) -> int:
        return self.increments.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)


@dataclass(frozen=True)
class StateTrajectory:
    times: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __len__(self):
        return len(self.times)

    def state(self, k: int) -> GaussianState:
        return GaussianState(self.means[k], self.covs[k])


@dataclass(frozen=True)
class InformationTrajectory:
    """Information matrix ``Y = V^-1`` and vector ``z = Y x`` on the grid."""

    times: np.ndarray
    Y: np.ndarray
    z: np.ndarray


def grid(dt: float, T: float, t0: float = 0.0):
    steps = int(round((T - t0) / dt)) if dt > 0 else 0
    if steps < 1:
        raise InvalidDimensionError(f"need dt > 0 and T > t0 (dt={dt}, T={T})")
    return steps, t0 + dt * np.arange(steps + 1)


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Square root ``L`` with ``L L^T = mat``, lower-triangular when ``mat`` is definite."""
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        lam, vecs = np.linalg.eigh(mat)
        return vecs * np.sqrt(np.clip(lam, 0.0, None))


def _check_grid(traj_len: int, record: MeasurementRecord) -> None:
    if traj_len != record.steps + 1:
        raise GridMismatchError(
            f"trajectory has {traj_len} points but record has {record.steps} steps"
        )


def _noise_stacks(model: ClassicalModel, n_points: int):
    """``D`` and ``Gamma`` as arrays with one entry per grid point."""
    out = []
    for name, arr in (("D", model.D), ("Gamma", model.Gamma)):
        if arr.ndim == 3:
            if arr.shape[0] != n_points:
                raise GridMismatchError(
                    f"time-varying {name} has {arr.shape[0]} points, grid has {n_points}"
                )
            out.append(arr)
        else:
            out.append(np.broadcast_to(arr, (n_points,) + arr.shape))
    return out


def _reduced_stacks(model: ClassicalModel, n_points: int):
    """Per-grid-point ``Gamma^T``, ``A - Gamma^T C`` and ``D - Gamma^T Gamma``."""
    D, Gamma = _noise_stacks(model, n_points)
    Gt = np.swapaxes(Gamma, -1, -2)
    return Gt, model.A - Gt @ model.C, D - Gt @ Gamma


def simulate_langevin(model: ClassicalModel, x0, dt: float, T: float, rng_seed: int = 0,
                      normals=None, t0: float = 0.0):
    """Euler-Maruyama path of the Langevin equation and its measurement record.

    Per step the pair ``(E dv_p, dv_m)`` is drawn jointly with covariance
    ``[[D, Gamma^T], [Gamma, I]] dt`` through the factorisation
    ``dv_m = sqrt(dt) xi_m``, ``E dv_p = Gamma^T dv_m + L sqrt(dt) xi_p`` with
    ``L L^T = D - Gamma^T Gamma``.  ``normals`` (shape ``(steps, m + d)``)
    replaces the seeded draws, e.g. to reuse a Brownian path on a coarser grid.

    Returns ``(times, path, record)``.
    """
    model.check_noise()
    steps, times = grid(dt, T, t0)
    d, m = model.dim, model.n_meas
    if normals is None:
        normals = standard_normals(rng_seed, steps, m + d)
    if normals.shape != (steps, m + d):
        raise InvalidDimensionError(f"normals must have shape {(steps, m + d)}, got {normals.shape}")
    G = model.Gamma
    L = psd_sqrt(model.D - G.T @ G)
    sq = np.sqrt(dt)
    dv_m = sq * normals[:, :m]
    dv_p = dv_m @ G + sq * normals[:, m:] @ L.T

    A, C = model.A, model.C
    path = np.empty((steps + 1, d))
    path[0] = x0
    x = path[0].copy()
    for k in range(steps):
        x = x + (A @ x) * dt + dv_p[k]
        path[k + 1] = x
    increments = path[:-1] @ C.T * dt + dv_m
    return times, path, MeasurementRecord(increments, dt, t0)


def kalman_filter(model: ClassicalModel, record: MeasurementRecord, x0, V0) -> StateTrajectory:
    """Kalman-Bucy filter with correlated process/measurement noise."""
    steps, dt = record.steps, record.dt
    d = model.dim
    D, Gamma = _noise_stacks(model, steps + 1)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    V0 = np.asarray(V0, dtype=float)
    if x0.size != d or V0.shape != (d, d):
        raise InvalidDimensionError("initial state does not match model dimension")
    if record.increments.shape[1] != model.n_meas:
        raise InvalidDimensionError("record width does not match measurement dimension")

    A, C = model.A, model.C
    At, Ct = A.T, C.T
    dy = record.increments
    means = np.empty((steps + 1, d))
    covs = np.empty((steps + 1, d, d))
    x, V = x0.copy(), 0.5 * (V0 + V0.T)
    means[0], covs[0] = x, V
    for k in range(steps):
        K = V @ Ct + Gamma[k].T
        x = x + (A @ x) * dt + K @ (dy[k] - (C @ x) * dt)
        V = V + (A @ V + V @ At + D[k] - K @ K.T) * dt
        V = 0.5 * (V + V.T)
        means[k + 1], covs[k + 1] = x, V
    return StateTrajectory(record.times, means, covs)


def innovations(C: np.ndarray, traj: StateTrajectory, record: MeasurementRecord) -> np.ndarray:
    """``dw = y dt - C x dt`` for each step, using the estimate at the step start."""
    _check_grid(len(traj), record)
    return record.increments - traj.means[:-1] @ C.T * record.dt


def retrofilter(model: ClassicalModel, record: MeasurementRecord) -> InformationTrajectory:
    """Backward (future-record) filter in information form, uninformative at the final time.

    With ``At = A - Gamma^T C`` and ``Dt = D - Gamma^T Gamma``, in reversed time
    ``s = T - t``::

        dY/ds = At^T Y + Y At - Y Dt Y + C^T C
        dz    = (At^T - Y Dt) z ds + (C^T - Y Gamma^T) dy
    """
    steps, dt = record.steps, record.dt
    d = model.dim
    Gt, At_, Dt_ = _reduced_stacks(model, steps + 1)
    AtT = np.swapaxes(At_, -1, -2)
    Ct = model.C.T
    CtC = Ct @ model.C
    dy = record.increments
    Y = np.zeros((steps + 1, d, d))
    z = np.zeros((steps + 1, d))
    Yk, zk = Y[steps].copy(), z[steps].copy()
    for k in range(steps - 1, -1, -1):
        j = k + 1
        YD = Yk @ Dt_[j]
        z_new = zk + (AtT[j] @ zk - YD @ zk) * dt + (Ct - Yk @ Gt[j]) @ dy[k]
        Yk = Yk + (AtT[j] @ Yk + Yk @ At_[j] - YD @ Yk + CtC) * dt
        Yk = 0.5 * (Yk + Yk.T)
        zk = z_new
        Y[k], z[k] = Yk, zk
    return InformationTrajectory(record.times, Y, z)


def rts_smooth(model: ClassicalModel, filtered: StateTrajectory, record: MeasurementRecord) -> StateTrajectory:
    """Continuous-time Rauch-Tung-Striebel smoother run backward over a stored filter.

    ::

        dx_S  = A x_S dt + Dt V_F^+ (x_S - x_F) dt + Gamma^T (y dt - C x_S dt)
        dV_S/dt = (At + Dt V_F^+) V_S + V_S (At + Dt V_F^+)^T - Dt

    with ``x_S(T) = x_F(T)`` and ``V_S(T) = V_F(T)``.
    """
    _check_grid(len(filtered), record)
    steps, dt = record.steps, record.dt
    Gt, At_, Dt_ = _reduced_stacks(model, steps + 1)
    DV = Dt_ @ batch_pseudo_inverse(filtered.covs)[0]
    M = At_ + DV
    MT = np.swapaxes(M, -1, -2)
    A, C = model.A, model.C
    xF = filtered.means
    dy = record.increments
    means = np.empty_like(filtered.means)
    covs = np.empty_like(filtered.covs)
    means[steps] = filtered.means[steps]
    covs[steps] = filtered.covs[steps]
    x, V = means[steps].copy(), covs[steps].copy()
    for k in range(steps - 1, -1, -1):
        j = k + 1
        dw = dy[k] - (C @ x) * dt
        x_new = x - ((A @ x + DV[j] @ (x - xF[j])) * dt + Gt[j] @ dw)
        V = V - (M[j] @ V + V @ MT[j] - Dt_[j]) * dt
        V = 0.5 * (V + V.T)
        x = x_new
        means[k], covs[k] = x, V
    return StateTrajectory(filtered.times, means, covs)


def mfp_combine(filtered: StateTrajectory, retro: InformationTrajectory) -> StateTrajectory:
    """Two-filter (Mayne-Fraser-Potter) smoothed state from filter and retrofilter.

    Evaluated as ``V_S = (I + V_F Y)^-1 V_F`` and
    ``x_S = (I + V_F Y)^-1 (x_F + V_F z)``, which equals
    ``(V_F^-1 + Y)^-1`` and ``V_S (V_F^-1 x_F + z)`` whenever ``V_F`` is
    invertible and stays well defined when it is not.
    """
    if len(filtered) != len(retro.times):
        raise GridMismatchError("filter and retrofilter grids differ")
    VF, xF = filtered.covs, filtered.means
    d = VF.shape[-1]
    S = np.eye(d) + VF @ retro.Y
    covs = np.linalg.solve(S, VF)
    covs = 0.5 * (covs + np.swapaxes(covs, -1, -2))
    rhs = xF + np.einsum("kij,kj->ki", VF, retro.z)
    means = np.linalg.solve(S, rhs[..., None])[..., 0]
    return StateTrajectory(filtered.times, means, covs)
