"""Gaussian states and the small dense linear algebra they need.

Phase-space vectors are ordered ``(q_1, p_1, ..., q_N, p_N)``.  All
dimensions here are tiny, so everything is plain dense numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidDimensionError, InvalidInputError

#: Minimum-eigenvalue tolerance for PSD and uncertainty checks.
PSD_TOL = 1e-10
#: Relative eigenvalue threshold below which an eigenvalue is treated as zero.
EIG_RTOL = 1e-9


@dataclass(frozen=True)
class GaussianState:
    """Mean vector and symmetric covariance of a Gaussian."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise InvalidDimensionError(
                f"covariance shape {cov.shape} does not match mean length {mean.size}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def is_valid(self) -> bool:
        scale = max(1.0, np.abs(self.cov).max(initial=0.0))
        if np.abs(self.cov - self.cov.T).max(initial=0.0) > 1e-12 * scale:
            return False
        return min_eigenvalue(self.cov) >= -PSD_TOL


def symplectic_form(n_modes: int) -> np.ndarray:
    """Block-diagonal symplectic matrix for ``n_modes`` bosonic modes."""
    if int(n_modes) != n_modes or n_modes < 1:
        raise InvalidDimensionError(f"mode count must be a positive integer, got {n_modes}")
    return np.kron(np.eye(int(n_modes)), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + np.swapaxes(mat, -1, -2))


def min_eigenvalue(mat: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(symmetrize(np.asarray(mat, dtype=float)))[0])


def is_psd(mat: np.ndarray, tol: float = PSD_TOL) -> bool:
    return min_eigenvalue(mat) >= -tol


def _check_phase_space_square(cov: np.ndarray) -> int:
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or cov.shape[0] % 2:
        raise InvalidDimensionError(
            f"expected a square matrix of even dimension, got shape {cov.shape}"
        )
    return cov.shape[0] // 2


def uncertainty_margin(cov: np.ndarray, hbar: float) -> float:
    """Smallest eigenvalue of the Hermitian matrix ``cov + i(hbar/2) Sigma``."""
    cov = np.asarray(cov, dtype=float)
    n_modes = _check_phase_space_square(cov)
    herm = cov + 0.5j * hbar * symplectic_form(n_modes)
    herm = 0.5 * (herm + herm.conj().T)
    return float(np.linalg.eigvalsh(herm)[0])


def check_uncertainty(cov: np.ndarray, hbar: float) -> bool:
    """True iff ``cov`` satisfies the Schrodinger-Heisenberg uncertainty relation."""
    return uncertainty_margin(cov, hbar) >= -PSD_TOL


def gaussian_convolve(a: GaussianState, b: GaussianState) -> GaussianState:
    """Average the kernel ``b`` over the mixing distribution ``a``.

    The kernel is centred on the mixing variable, so its own mean is not
    used: the result has ``a``'s mean and covariance ``a.cov + b.cov``.
    """
    if a.dim != b.dim:
        raise InvalidDimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return GaussianState(a.mean.copy(), a.cov + b.cov)


def default_eig_tol(eigenvalues: np.ndarray) -> np.ndarray:
    """``EIG_RTOL * max(max |lambda|, 1)`` along the last axis."""
    return EIG_RTOL * np.maximum(np.abs(eigenvalues).max(axis=-1), 1.0)


def batch_pseudo_inverse(mats, eig_tol=None, ranks=None):
    """Stacked version of :func:`symmetric_pseudo_inverse` over a leading axis.

    ``eig_tol`` may be a scalar or one value per matrix; ``ranks`` (one per
    matrix) overrides the threshold decision.
    """
    mats = np.asarray(mats, dtype=float)
    lam, vecs = np.linalg.eigh(symmetrize(mats))
    order = np.argsort(-np.abs(lam), axis=-1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=-1)
    vecs = np.take_along_axis(vecs, order[:, None, :], axis=-1)
    bases = np.swapaxes(vecs, -1, -2)
    if ranks is None:
        tol = default_eig_tol(lam) if eig_tol is None else np.broadcast_to(eig_tol, lam.shape[:1])
        ranks = np.count_nonzero(np.abs(lam) > tol[:, None], axis=-1)
    ranks = np.asarray(ranks, dtype=int)
    keep = np.arange(lam.shape[-1])[None, :] < ranks[:, None]
    inv_lam = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
    pinv = np.einsum("kji,kj,kjl->kil", bases, inv_lam, bases)
    return symmetrize(pinv), ranks, bases, lam


def symmetric_pseudo_inverse(mat, eig_tol=None, rank=None):
    """Moore-Penrose pseudo-inverse of a symmetric matrix via its eigenbasis.

    Returns ``(pinv, rank, P, eigenvalues)`` with ``mat = P.T @ diag(eigenvalues) @ P``.
    Eigenvalues are sorted by decreasing magnitude, so the first ``rank`` rows
    of ``P`` span the retained subspace.  Eigenvalues with ``|lambda| <= eig_tol``
    are treated as exactly zero; ``rank`` overrides the threshold decision.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise InvalidDimensionError(f"expected a square matrix, got shape {mat.shape}")
    scale = max(np.abs(mat).max(initial=0.0), np.finfo(float).tiny)
    if np.abs(mat - mat.T).max(initial=0.0) > 1e-10 * scale:
        raise InvalidInputError("matrix is not symmetric")
    pinv, ranks, bases, lam = batch_pseudo_inverse(
        mat[None], eig_tol=eig_tol, ranks=None if rank is None else [rank]
    )
    return pinv[0], int(ranks[0]), bases[0], lam[0]


def uncertainty_margins(covs: np.ndarray, hbar: float) -> np.ndarray:
    """:func:`uncertainty_margin` for a stack of covariances."""
    covs = np.asarray(covs, dtype=float)
    n_modes = _check_phase_space_square(covs[0])
    herm = covs + 0.5j * hbar * symplectic_form(n_modes)
    herm = 0.5 * (herm + np.conj(np.swapaxes(herm, -1, -2)))
    return np.linalg.eigvalsh(herm)[..., 0]


def min_eigenvalues(mats: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of each symmetric matrix in a stack."""
    return np.linalg.eigvalsh(symmetrize(np.asarray(mats, dtype=float)))[..., 0]
