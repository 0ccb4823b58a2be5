"""Dense float64 linear algebra: eigendecomposition, norms, Kronecker helpers.

All matrices are plain numpy float64 arrays in row-major (C) layout.
Vectorization follows the column-stacking convention, so ``vectorize`` and
``unvectorize`` use Fortran ordering internally.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    AsymmetricInputError,
    IterationLimitError,
    LengthMismatchError,
    NonSquareError,
    SizeGuardError,
)

ASYMMETRY_TOL = 1e-12
KRON_ENTRY_GUARD = 10**8


def as_matrix(M) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got ndim={M.ndim}")
    return M


@dataclass(frozen=True)
class SymmetricEigen:
    """Eigendecomposition of a symmetric matrix.

    eigenvalues are sorted ascending; eigenvectors holds the matching unit
    eigenvectors as columns, so M = Q diag(w) Q^T.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]


def require_square(M: np.ndarray) -> np.ndarray:
    M = as_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise NonSquareError(f"expected a square matrix, got shape {M.shape}")
    return M


def require_symmetric(M: np.ndarray, tol: float = ASYMMETRY_TOL) -> np.ndarray:
    M = require_square(M)
    if M.size and np.max(np.abs(M - M.T)) > tol:
        raise AsymmetricInputError(
            f"asymmetry {np.max(np.abs(M - M.T)):.3e} exceeds {tol:.1e}"
        )
    return M


def sym_eig(M) -> SymmetricEigen:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending."""
    M = require_symmetric(M)
    try:
        w, Q = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:  # LAPACK hit its sweep limit
        raise IterationLimitError(str(exc)) from exc
    return SymmetricEigen(eigenvalues=w, eigenvectors=Q)


def frobenius_norm(M) -> float:
    return float(np.linalg.norm(as_matrix(M)))


def spectral_norm_symmetric(M) -> float:
    """Largest |eigenvalue| of a symmetric matrix."""
    M = require_symmetric(M)
    if M.size == 0:
        return 0.0
    w = np.linalg.eigvalsh(M)
    return float(np.max(np.abs(w)))


def kron(A, B) -> np.ndarray:
    """Kronecker product, guarded against accidental huge allocations."""
    A = as_matrix(A)
    B = as_matrix(B)
    entries = A.shape[0] * B.shape[0] * A.shape[1] * B.shape[1]
    if entries > KRON_ENTRY_GUARD:
        raise SizeGuardError(f"kron result would have {entries} entries")
    return np.kron(A, B)


def vectorize(M) -> np.ndarray:
    """Stack the columns of M into a single vector."""
    return as_matrix(M).flatten(order="F")


def unvectorize(v, rows: int, cols: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.shape[0] != rows * cols:
        raise LengthMismatchError(
            f"vector of length {v.shape[0]} cannot fill a {rows}x{cols} matrix"
        )
    return v.reshape((rows, cols), order="F")


def commutation_matrix(m: int) -> np.ndarray:
    """K with K @ vec(M) = vec(M^T) for m x m matrices M."""
    K = np.zeros((m * m, m * m))
    for i in range(m):
        for j in range(m):
            K[j * m + i, i * m + j] = 1.0
    return K
