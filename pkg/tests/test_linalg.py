import numpy as np
import pytest

from eignn import linalg
from eignn.errors import (
    AsymmetricInputError,
    LengthMismatchError,
    NonSquareError,
    SizeGuardError,
)


def test_sym_eig_rank_one():
    M = np.array([[0.5, 0.5], [0.5, 0.5]])
    eig = linalg.sym_eig(M)
    assert np.allclose(eig.eigenvalues, [0.0, 1.0], atol=1e-14)
    # Eigenvectors are (+-[1,-1]/sqrt2, +-[1,1]/sqrt2); compare projectors.
    Q = eig.eigenvectors
    assert np.allclose(np.abs(Q[:, 0]), [2**-0.5, 2**-0.5], atol=1e-14)
    assert np.sign(Q[0, 0]) != np.sign(Q[1, 0])
    assert np.allclose(Q @ np.diag(eig.eigenvalues) @ Q.T, M, atol=1e-14)


def test_sym_eig_identity():
    eig = linalg.sym_eig(np.eye(3))
    assert np.allclose(eig.eigenvalues, 1.0)
    Q = eig.eigenvectors
    assert np.allclose(Q.T @ Q, np.eye(3), atol=1e-12)


def test_sym_eig_reconstruction_random():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(8, 8))
    M = 0.5 * (M + M.T)
    eig = linalg.sym_eig(M)
    Q, w = eig.eigenvectors, eig.eigenvalues
    assert np.max(np.abs(Q @ np.diag(w) @ Q.T - M)) <= 1e-9
    assert np.max(np.abs(Q.T @ Q - np.eye(8))) <= 1e-10
    assert np.all(np.diff(w) >= 0)
    assert eig.n == 8


def test_sym_eig_eigenvalue_sum_is_trace():
    rng = np.random.default_rng(1)
    for _ in range(5):
        M = rng.normal(size=(6, 6))
        M = 0.5 * (M + M.T)
        eig = linalg.sym_eig(M)
        bound = 1e-9 * 6 * max(1.0, np.max(np.abs(M)))
        assert abs(eig.eigenvalues.sum() - np.trace(M)) <= bound


def test_sym_eig_rejects_bad_input():
    with pytest.raises(NonSquareError):
        linalg.sym_eig(np.ones((2, 3)))
    with pytest.raises(AsymmetricInputError):
        linalg.sym_eig(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_norms():
    assert linalg.frobenius_norm(np.eye(2)) == pytest.approx(2**0.5)
    assert linalg.frobenius_norm(np.zeros((3, 3))) == 0.0
    M = np.array([[0.5, 0.5], [0.5, 0.5]])
    assert linalg.spectral_norm_symmetric(M) == pytest.approx(1.0)
    with pytest.raises(AsymmetricInputError):
        linalg.spectral_norm_symmetric(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_kron_blocks():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    K = linalg.kron(np.eye(2), M)
    assert np.array_equal(K[:2, :2], M)
    assert np.array_equal(K[2:, 2:], M)
    assert np.all(K[:2, 2:] == 0) and np.all(K[2:, :2] == 0)
    assert np.array_equal(linalg.kron(np.array([[2.0]]), M), 2 * M)


def test_kron_spectral_norm_multiplicative():
    rng = np.random.default_rng(2)
    for _ in range(5):
        A = rng.normal(size=(3, 3))
        A = 0.5 * (A + A.T)
        B = rng.normal(size=(3, 3))
        B = 0.5 * (B + B.T)
        lhs = linalg.spectral_norm_symmetric(linalg.kron(A, B))
        rhs = linalg.spectral_norm_symmetric(A) * linalg.spectral_norm_symmetric(B)
        assert lhs == pytest.approx(rhs, rel=1e-10)


def test_kron_size_guard():
    with pytest.raises(SizeGuardError):
        linalg.kron(np.ones((10001, 10001)), np.ones((1, 1)))


def test_vectorize_column_stacking():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(linalg.vectorize(M), [1.0, 3.0, 2.0, 4.0])


def test_vectorize_round_trip():
    rng = np.random.default_rng(3)
    M = rng.normal(size=(4, 7))
    assert np.array_equal(linalg.unvectorize(linalg.vectorize(M), 4, 7), M)
    with pytest.raises(LengthMismatchError):
        linalg.unvectorize(np.zeros(5), 2, 3)


def test_vectorize_kron_identity():
    rng = np.random.default_rng(4)
    for _ in range(5):
        A, B, C = (rng.normal(size=(3, 3)) for _ in range(3))
        lhs = linalg.vectorize(A @ B @ C)
        rhs = linalg.kron(C.T, A) @ linalg.vectorize(B)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_commutation_matrix():
    for m in (1, 2, 3, 5):
        K = linalg.commutation_matrix(m)
        rng = np.random.default_rng(m)
        M = rng.normal(size=(m, m))
        assert np.array_equal(K @ linalg.vectorize(M), linalg.vectorize(M.T))
