"""From a physical LGQ description to the real matrices of the moment equations.

A system is a quadratic Hamiltonian ``H = x^T G x / 2`` plus linear Lindblad
operators ``c = B x``.  Each observer ``r`` (``"o"`` for the observed record,
``"u"`` for the unobserved one) unravels the channels with a complex matrix
``M_r``.  Measurement and cross-correlation matrices have one row per
channel, i.e. shape ``(K, 2N)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDimensionError, RejectedModelError
from .gaussian_linalg import symplectic_form

_DIAG_TOL = 1e-10
_ETA_TOL = 1e-12


@dataclass(frozen=True)
class LgqSystemSpec:
    n_modes: int
    hbar: float
    G: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        G = np.asarray(self.G, dtype=float)
        B = np.atleast_2d(np.asarray(self.B, dtype=complex))
        dim = 2 * self.n_modes
        if self.n_modes < 1:
            raise InvalidDimensionError("n_modes must be >= 1")
        if self.hbar <= 0:
            raise InvalidDimensionError("hbar must be positive")
        if G.shape != (dim, dim):
            raise InvalidDimensionError(f"G must be {dim}x{dim}, got {G.shape}")
        if B.shape[1] != dim:
            raise InvalidDimensionError(f"B must have {dim} columns, got {B.shape}")
        if np.abs(G - G.T).max() > 1e-12 * max(1.0, np.abs(G).max()):
            raise InvalidDimensionError("G must be symmetric")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "B", B)

    @property
    def n_channels(self) -> int:
        return self.B.shape[0]


@dataclass(frozen=True)
class UnravellingSpec:
    M_o: np.ndarray
    M_u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "M_o", np.atleast_2d(np.asarray(self.M_o, dtype=complex)))
        object.__setattr__(self, "M_u", np.atleast_2d(np.asarray(self.M_u, dtype=complex)))

    def efficiencies(self, record: str) -> np.ndarray:
        M = self.M_o if record == "o" else self.M_u
        return np.real(np.diag(M @ M.conj().T))


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def validate_unravelling(spec: UnravellingSpec) -> ValidationReport:
    """Check the efficiency constraints on both unravelling matrices."""
    report = ValidationReport()
    K = spec.M_o.shape[0]
    for name, M in (("M_o", spec.M_o), ("M_u", spec.M_u)):
        if M.shape != (K, K):
            report.violations.append(f"{name}: expected shape ({K}, {K}), got {M.shape}")
    if not report.ok:
        return report

    for r, M in (("o", spec.M_o), ("u", spec.M_u)):
        mm = M @ M.conj().T
        off = mm - np.diag(np.diag(mm))
        for j, k in zip(*np.nonzero(np.abs(off) > _DIAG_TOL)):
            if j < k:
                report.violations.append(f"M_{r} M_{r}^dagger not diagonal at ({j}, {k})")
        for k, eta in enumerate(np.real(np.diag(mm))):
            if eta < -_ETA_TOL or eta > 1 + _ETA_TOL:
                report.violations.append(f"eta_{r},{k} = {eta:.6g} outside [0, 1]")

    eta_o = spec.efficiencies("o")
    eta_u = spec.efficiencies("u")
    for k in range(K):
        if eta_o[k] + eta_u[k] > 1 + _ETA_TOL:
            report.violations.append(
                f"eta_o+eta_u <= 1 violated on channel {k}: {eta_o[k] + eta_u[k]:.6g}"
            )
    if not np.any(eta_o > _ETA_TOL):
        report.violations.append("at least one eta_o,k > 0 required")
    if not np.any(eta_u > _ETA_TOL):
        report.violations.append("at least one eta_u,k > 0 required")
    return report


@dataclass(frozen=True)
class DerivedModel:
    """Real matrices driving the LGQ moment equations."""

    A: np.ndarray
    D: np.ndarray
    C_o: np.ndarray
    C_u: np.ndarray
    Gamma_o: np.ndarray
    Gamma_u: np.ndarray
    Sigma: np.ndarray
    hbar: float

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def C(self, record: str) -> np.ndarray:
        return self.C_o if record == "o" else self.C_u

    def Gamma(self, record: str) -> np.ndarray:
        return self.Gamma_o if record == "o" else self.Gamma_u

    def gain(self, V: np.ndarray, record: str, sign: int = 1) -> np.ndarray:
        """Kalman gain ``V C_r^T +/- Gamma_r^T``."""
        return V @ self.C(record).T + sign * self.Gamma(record).T

    def riccati_rhs(self, V: np.ndarray, records=("o", "u")) -> np.ndarray:
        """Right-hand side of the covariance equation conditioned on ``records``."""
        rhs = self.A @ V + V @ self.A.T + self.D
        for r in records:
            K = self.gain(V, r)
            rhs = rhs - K @ K.T
        return rhs


def _stack_re_im(M: np.ndarray) -> np.ndarray:
    return np.vstack([M.real, M.imag])


def drift_and_diffusion(sys: LgqSystemSpec):
    Sigma = symplectic_form(sys.n_modes)
    BB = sys.B.conj().T @ sys.B
    A = Sigma @ (sys.G + BB.imag)
    D = sys.hbar * Sigma @ BB.real @ Sigma.T
    return A, 0.5 * (D + D.T), Sigma


def measurement_matrices(sys: LgqSystemSpec, M: np.ndarray):
    """Measurement and cross-correlation matrices ``(C_r, Gamma_r)`` for one unravelling."""
    K = sys.n_channels
    Sigma = symplectic_form(sys.n_modes)
    T_t = np.hstack([M.T.real, M.T.imag])  # T^T, shape (K, 2K)
    B_tilde = _stack_re_im(sys.B)  # shape (2K, 2N)
    S = np.block([[np.zeros((K, K)), np.eye(K)], [-np.eye(K), np.zeros((K, K))]])
    C = 2.0 / np.sqrt(sys.hbar) * T_t @ B_tilde
    Gamma = -np.sqrt(sys.hbar) * T_t @ S @ B_tilde @ Sigma.T
    return C, Gamma


def build_derived_model(sys: LgqSystemSpec, unr: UnravellingSpec, validate: bool = True) -> DerivedModel:
    """Assemble ``A, D, C_r, Gamma_r`` from the physical specification.

    ``validate=False`` skips the unravelling constraints; it exists for
    limiting-case tests (e.g. an observer with zero efficiency everywhere).
    """
    K = sys.n_channels
    if unr.M_o.shape != (K, K) or unr.M_u.shape != (K, K):
        raise InvalidDimensionError(
            f"unravelling matrices must be {K}x{K} for {K} channels"
        )
    if validate:
        report = validate_unravelling(unr)
        if not report.ok:
            raise RejectedModelError(report)
    A, D, Sigma = drift_and_diffusion(sys)
    C_o, Gamma_o = measurement_matrices(sys, unr.M_o)
    C_u, Gamma_u = measurement_matrices(sys, unr.M_u)
    return DerivedModel(A, D, C_o, C_u, Gamma_o, Gamma_u, Sigma, float(sys.hbar))


def homodyne_unravelling(eta, theta) -> np.ndarray:
    """``diag(sqrt(eta_k) exp(i theta_k))`` for per-channel homodyne detection."""
    eta = np.asarray(eta, dtype=float)
    theta = np.asarray(theta, dtype=float)
    return np.diag(np.sqrt(eta) * np.exp(1j * theta))


def preset_paper_example(
    g: float,
    theta_gamma_o: float = 0.0,
    theta_kappa_o: float = 0.0,
    theta_gamma_u: float = 0.0,
    theta_kappa_u: float = 0.0,
    eta=(1.0, 0.0, 0.0, 1.0),
    hbar: float = 2.0,
):
    """Single-mode squeezing system with a damping channel and a position channel.

    Time is in units of the squeezing rate and the damping rate equals it.
    ``eta`` is ``(eta_gamma_o, eta_kappa_o, eta_gamma_u, eta_kappa_u)``.
    The resulting drift is ``diag(0, -2)`` and diffusion ``hbar diag(1, 1 + g)``.
    """
    if g <= 0:
        raise InvalidDimensionError("g must be positive")
    G = np.array([[0.0, 1.0], [1.0, 0.0]])
    B = np.array([[1.0, 1.0j], [np.sqrt(g), 0.0]])
    sys = LgqSystemSpec(n_modes=1, hbar=hbar, G=G, B=B)
    eta_go, eta_ko, eta_gu, eta_ku = eta
    unr = UnravellingSpec(
        M_o=homodyne_unravelling([eta_go, eta_ko], [theta_gamma_o, theta_kappa_o]),
        M_u=homodyne_unravelling([eta_gu, eta_ku], [theta_gamma_u, theta_kappa_u]),
    )
    report = validate_unravelling(unr)
    if not report.ok:
        raise RejectedModelError(report)
    return sys, unr


def fig1_top(g: float = 1.0):
    """Observer monitors the damping channel at phase pi/8; the hidden record is the position channel."""
    return preset_paper_example(g, theta_gamma_o=np.pi / 8, theta_kappa_u=0.0, eta=(1.0, 0.0, 0.0, 1.0))


def fig1_bottom(g: float = 0.1):
    """Channels of :func:`fig1_top` swapped between the two observers."""
    return preset_paper_example(g, theta_kappa_o=0.0, theta_gamma_u=np.pi / 8, eta=(0.0, 1.0, 1.0, 0.0))


def preset_initial_state(g: float):
    """Zero mean and ``diag(10, (1 + g)/2)`` covariance."""
    return np.zeros(2), np.diag([10.0, (1.0 + g) / 2.0])
