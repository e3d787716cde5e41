import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qsmooth.errors import InvalidDimensionError, InvalidInputError
from qsmooth.gaussian_linalg import (
    GaussianState,
    batch_pseudo_inverse,
    check_uncertainty,
    gaussian_convolve,
    is_psd,
    symmetric_pseudo_inverse,
    symplectic_form,
    uncertainty_margin,
    uncertainty_margins,
)

HBAR = 2.0


def test_symplectic_form_blocks():
    S = symplectic_form(2)
    expected = np.array([[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]], dtype=float)
    np.testing.assert_array_equal(S, expected)
    np.testing.assert_array_equal(S @ S, -np.eye(4))


def test_symplectic_form_rejects_bad_mode_count():
    with pytest.raises(InvalidDimensionError):
        symplectic_form(0)


def test_vacuum_saturates_uncertainty():
    # eigenvalues of (hbar/2)(I + i Sigma) are 0 and hbar
    V = 0.5 * HBAR * np.eye(2)
    assert uncertainty_margin(V, HBAR) == pytest.approx(0.0, abs=1e-14)
    assert check_uncertainty(V, HBAR)


def test_squeezed_vacuum_is_valid():
    r = 0.8
    V = 0.5 * HBAR * np.diag([np.exp(2 * r), np.exp(-2 * r)])
    assert check_uncertainty(V, HBAR)


def test_sub_vacuum_violates_uncertainty():
    V = 0.9 * 0.5 * HBAR * np.eye(2)
    assert uncertainty_margin(V, HBAR) == pytest.approx(-0.1, abs=1e-12)
    assert not check_uncertainty(V, HBAR)


def test_uncertainty_on_odd_dimension_raises():
    with pytest.raises(InvalidDimensionError):
        uncertainty_margin(np.eye(3), HBAR)


def test_batched_margins_match_single():
    rng = np.random.default_rng(0)
    covs = []
    for _ in range(5):
        X = rng.standard_normal((4, 4))
        covs.append(X @ X.T + np.eye(4))
    covs = np.array(covs)
    np.testing.assert_allclose(uncertainty_margins(covs, HBAR), [uncertainty_margin(c, HBAR) for c in covs])


def test_pinv_identity():
    pinv, rank, P, lam = symmetric_pseudo_inverse(np.eye(2), 1e-10)
    np.testing.assert_allclose(pinv, np.eye(2))
    assert rank == 2


def test_pinv_rank_one_diagonal():
    pinv, rank, P, lam = symmetric_pseudo_inverse(np.diag([2.0, 0.0]), 1e-10)
    np.testing.assert_allclose(pinv, np.diag([0.5, 0.0]))
    assert rank == 1


def test_pinv_rank_one_outer_product_against_least_squares():
    rng = np.random.default_rng(4)
    v = rng.standard_normal(4)
    M = np.outer(v, v)
    pinv, rank, P, lam = symmetric_pseudo_inverse(M)
    assert rank == 1
    np.testing.assert_allclose(pinv, np.outer(v, v) / np.dot(v, v) ** 2, atol=1e-12)
    # minimum-norm least-squares solutions column by column
    oracle = np.column_stack([np.linalg.lstsq(M, e, rcond=1e-10)[0] for e in np.eye(4)])
    np.testing.assert_allclose(pinv, oracle, atol=1e-10)


def test_pinv_basis_reconstructs_matrix():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((3, 2))
    M = X @ X.T
    _, rank, P, lam = symmetric_pseudo_inverse(M)
    assert rank == 2
    np.testing.assert_allclose(P.T @ np.diag(lam) @ P, M, atol=1e-12)
    np.testing.assert_allclose(P @ P.T, np.eye(3), atol=1e-12)


def test_pinv_rank_override():
    pinv, rank, _, _ = symmetric_pseudo_inverse(np.diag([4.0, 1e-3]), rank=1)
    assert rank == 1
    np.testing.assert_allclose(pinv, np.diag([0.25, 0.0]))


def test_pinv_rejects_asymmetric():
    with pytest.raises(InvalidInputError):
        symmetric_pseudo_inverse(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_pinv_threshold_is_relative_to_largest_eigenvalue():
    # 1e-6 is far above 1e-9 * 1, but below 1e-9 * 1e4
    _, rank_small, _, _ = symmetric_pseudo_inverse(np.diag([1.0, 1e-6]))
    _, rank_big, _, _ = symmetric_pseudo_inverse(np.diag([1e4, 1e-6]))
    assert rank_small == 2
    assert rank_big == 1


def test_batch_pinv_matches_loop():
    rng = np.random.default_rng(2)
    mats = []
    for r in (0, 1, 2, 2):
        X = rng.standard_normal((2, r))
        mats.append(X @ X.T)
    pinv, ranks, _, _ = batch_pseudo_inverse(np.array(mats))
    np.testing.assert_array_equal(ranks, [0, 1, 2, 2])
    for M, Mp in zip(mats, pinv):
        np.testing.assert_allclose(Mp, np.linalg.pinv(M, rcond=1e-9, hermitian=True), atol=1e-10)


def test_gaussian_convolve_adds_covariances():
    a = GaussianState([1.0, -2.0], np.diag([1.0, 2.0]))
    b = GaussianState([5.0, 5.0], np.array([[0.5, 0.1], [0.1, 0.3]]))
    out = gaussian_convolve(a, b)
    np.testing.assert_array_equal(out.mean, a.mean)
    np.testing.assert_allclose(out.cov, a.cov + b.cov)


def test_gaussian_convolve_dimension_mismatch():
    with pytest.raises(InvalidDimensionError):
        gaussian_convolve(GaussianState([0.0], [[1.0]]), GaussianState([0.0, 0.0], np.eye(2)))


def test_gaussian_state_validation():
    with pytest.raises(InvalidDimensionError):
        GaussianState([0.0, 0.0], np.eye(3))
    assert GaussianState([0.0, 0.0], np.eye(2)).is_valid()
    assert not GaussianState([0.0, 0.0], np.diag([1.0, -1.0])).is_valid()


def _psd(n):
    return arrays(np.float64, (n, n), elements=st.floats(-3, 3)).map(lambda X: X @ X.T)


@settings(max_examples=60, deadline=None)
@given(_psd(3))
def test_pinv_moore_penrose_conditions(M):
    Mp, rank, _, _ = symmetric_pseudo_inverse(M)
    scale = max(1.0, np.abs(M).max()) ** 2
    np.testing.assert_allclose(M @ Mp @ M, M, atol=1e-6 * scale)
    np.testing.assert_allclose(Mp, Mp.T, atol=1e-12 * max(1.0, np.abs(Mp).max()))
    assert 0 <= rank <= 3


@settings(max_examples=60, deadline=None)
@given(_psd(2), _psd(2))
def test_convolution_of_valid_states_stays_valid(A, B):
    # adding a classical PSD covariance never breaks the uncertainty relation
    V = 0.5 * HBAR * np.eye(2) + A
    out = gaussian_convolve(GaussianState(np.zeros(2), V), GaussianState(np.zeros(2), B))
    assert check_uncertainty(out.cov, HBAR)
    assert is_psd(out.cov - V)
