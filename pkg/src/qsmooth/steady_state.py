"""Steady states of the covariance Riccati flows and the smoothness condition.

The smoothed quantum mean has a differentiable path in steady state exactly
when the true-state covariance (both records) coincides with the covariance
of a filter on the unobserved record alone, equivalently when the observed
record's gain ``V_T C_o^T + Gamma_o^T`` vanishes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConsistencyError, DivergenceError, InvalidInputError
from .gaussian_linalg import symmetrize
from .model_builder import DerivedModel

RHS_TOL = 1e-10
ONSET_TOL = 1e-6
DEFAULT_TOL = 1e-6


@dataclass(frozen=True)
class RiccatiFixedPoint:
    V: np.ndarray
    convergence_time: float
    residual: float
    channels: tuple


@dataclass(frozen=True)
class SteadyStateReport:
    V_T_ss: np.ndarray
    V_U_ss: np.ndarray
    gain_norm: float
    covariance_gap: float
    condition_met: bool
    convergence_time: float
    tol: float
    scale: float

    def to_dict(self) -> dict:
        out = asdict(self)
        out["V_T_ss"] = self.V_T_ss.tolist()
        out["V_U_ss"] = self.V_U_ss.tolist()
        return out


def _check_channels(channels) -> tuple:
    channels = tuple(channels)
    bad = [c for c in channels if c not in ("o", "u")]
    if bad or len(set(channels)) != len(channels):
        raise InvalidInputError(f"channels must be a subset of ('o', 'u'), got {channels}")
    return channels


def riccati_rhs_stack(model: DerivedModel, covs: np.ndarray, channels=("o", "u")) -> np.ndarray:
    """``dV/dt`` of the selected-channel Riccati flow at each covariance of a stack."""
    covs = np.asarray(covs, dtype=float)
    rhs = model.A @ covs + covs @ model.A.T + model.D
    for r in _check_channels(channels):
        K = covs @ model.C(r).T + model.Gamma(r).T
        rhs = rhs - K @ np.swapaxes(K, -1, -2)
    return rhs


def onset_time(model: DerivedModel, covs: np.ndarray, times: np.ndarray, channels=("o", "u"),
               tol: float = ONSET_TOL) -> float:
    """First grid time at which ``|dV/dt|_F < tol``; ``nan`` if never reached."""
    norms = np.linalg.norm(riccati_rhs_stack(model, covs, channels), axis=(-2, -1))
    hit = np.flatnonzero(norms < tol)
    return float(times[hit[0]]) if hit.size else float("nan")


def solve_steady_riccati(model: DerivedModel, channels=("o", "u"), V0=None, dt: float = 1e-3,
                         T_max: float = 50.0, tol: float = RHS_TOL) -> RiccatiFixedPoint:
    """Integrate the covariance equation conditioned on ``channels`` to its fixed point.

    Euler steps of size ``dt`` run until ``|dV/dt|_F < tol``.  The Euler map and
    the flow share fixed points, so the result solves the algebraic equation
    to ``tol``.  ``convergence_time`` is the first time ``|dV/dt|_F`` drops
    below ``ONSET_TOL``.  ``V0`` defaults to the vacuum covariance ``hbar/2 I``.
    """
    channels = _check_channels(channels)
    if V0 is None:
        V0 = 0.5 * model.hbar * np.eye(model.dim)
    V = symmetrize(np.asarray(V0, dtype=float))
    A, At, D = model.A, model.A.T, model.D
    if channels:
        C = np.vstack([model.C(r) for r in channels])
        Gt = np.vstack([model.Gamma(r) for r in channels]).T
    else:
        C = np.zeros((0, model.dim))
        Gt = np.zeros((model.dim, 0))
    Ct = C.T
    n_steps = int(np.ceil(T_max / dt))
    onset = float("nan")
    for k in range(n_steps + 1):
        K = V @ Ct + Gt
        rhs = A @ V + V @ At + D - K @ K.T
        norm = np.linalg.norm(rhs)
        if not np.isfinite(norm):
            raise DivergenceError(f"Riccati flow for channels {channels} became non-finite at t={k * dt:.6g}")
        if np.isnan(onset) and norm < ONSET_TOL:
            onset = k * dt
        if norm < tol:
            return RiccatiFixedPoint(V, onset, float(norm), channels)
        V = V + rhs * dt
        V = 0.5 * (V + V.T)
    raise DivergenceError(
        f"Riccati flow for channels {channels} did not converge within T_max={T_max} "
        f"(|dV/dt|_F = {norm:.3g}, largest in diagonal entry {int(np.argmax(np.abs(np.diag(rhs))))})"
    )


def check_differentiability(model: DerivedModel, tol: float = DEFAULT_TOL, V0=None, dt: float = 1e-3,
                            T_max: float = 50.0) -> SteadyStateReport:
    """Compare the steady true-state covariance with the unobserved-record filter's.

    Both routes, ``|V_T^ss - V_U^ss|_F <= tol`` and
    ``|V_T^ss C_o^T + Gamma_o^T|_F <= tol * max(1, |C_o|_F)``, are evaluated;
    a disagreement raises :class:`ConsistencyError`.
    """
    true_fp = solve_steady_riccati(model, ("o", "u"), V0, dt, T_max)
    bob_fp = solve_steady_riccati(model, ("u",), V0, dt, T_max)
    gap = float(np.linalg.norm(true_fp.V - bob_fp.V))
    gain = float(np.linalg.norm(model.gain(true_fp.V, "o")))
    scale = max(1.0, float(np.linalg.norm(model.C_o)))
    by_cov = gap <= tol
    by_gain = gain <= tol * scale
    if by_cov != by_gain:
        raise ConsistencyError(
            f"covariance route ({gap:.3g} <= {tol:g}: {by_cov}) disagrees with gain route "
            f"({gain:.3g} <= {tol * scale:g}: {by_gain})"
        )
    return SteadyStateReport(true_fp.V, bob_fp.V, gain, gap, by_cov, true_fp.convergence_time, tol, scale)


def quadratic_variation(series, times, window) -> np.ndarray:
    """Per-component sum of squared increments of ``series`` over ``[t1, t2]``."""
    series = np.asarray(series, dtype=float)
    times = np.asarray(times, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    if series.shape[0] != times.size:
        raise InvalidInputError("series and times have different lengths")
    t1, t2 = window
    slack = 1e-9 * max(1.0, abs(times[-1]))
    if t1 < times[0] - slack or t2 > times[-1] + slack:
        raise InvalidInputError(f"window [{t1}, {t2}] outside grid [{times[0]}, {times[-1]}]")
    idx = np.flatnonzero((times >= t1 - slack) & (times <= t2 + slack))
    if idx.size < 2:
        raise InvalidInputError(f"window [{t1}, {t2}] contains fewer than two grid points")
    return (np.diff(series[idx[0]:idx[-1] + 1], axis=0) ** 2).sum(axis=0)
