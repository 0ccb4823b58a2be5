"""Brute-force ground truth: fixed-point iteration, finite-depth unrolling,
the dense Kronecker closed form, and finite-difference gradients.

Everything here is test/benchmark machinery; none of it runs on the
production training path.
"""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import NonFiniteLossError, SingularUError, SizeGuardError
from .model import EignnModel, g_of_f
from .trainer import SpectralCache

KRON_SOLVE_GUARD = 5000  # max m*n before the dense mn x mn system is refused


@dataclass
class IterationReport:
    iterations: int
    final_residual: float
    residual_history: list
    converged: bool


def iterate_fixed_point(model: EignnModel, X, S, tol=1e-12, max_iters=10000):
    """Iterate Z <- gamma g(F) Z S + X from Z0 = X until the max-abs step
    falls below tol.  Non-convergence is reported, never raised."""
    X = linalg.as_matrix(X)
    gF = g_of_f(model.F, model.eps_f)
    Z = X.copy()
    history = []
    residual = np.inf
    its = 0
    for its in range(1, max_iters + 1):
        Z_next = model.gamma * (gF @ Z @ S) + X
        residual = float(np.max(np.abs(Z_next - Z))) if Z.size else 0.0
        history.append(residual)
        Z = Z_next
        if residual <= tol:
            break
    return Z, IterationReport(
        iterations=its,
        final_residual=residual,
        residual_history=history,
        converged=residual <= tol,
    )


def finite_depth_forward(model: EignnModel, X, S, H: int) -> np.ndarray:
    """Exactly H unrolled applications of the layer recurrence."""
    if H < 0:
        raise ValueError("depth must be non-negative")
    X = linalg.as_matrix(X)
    gF = g_of_f(model.F, model.eps_f)
    Z = X.copy()
    for _ in range(H):
        Z = model.gamma * (gF @ Z @ S) + X
    return Z


def _build_u(model: EignnModel, X, S):
    X = linalg.as_matrix(X)
    m, n = X.shape
    if m * n > KRON_SOLVE_GUARD:
        raise SizeGuardError(f"dense closed form refused at m*n={m * n}")
    gF = g_of_f(model.F, model.eps_f)
    U = np.eye(m * n) - model.gamma * linalg.kron(S, gF)
    return X, U


def kron_forward(model: EignnModel, X, S) -> np.ndarray:
    """Solve (I - gamma [S (x) g(F)]) vec(Z) = vec(X) densely."""
    X, U = _build_u(model, X, S)
    m, n = X.shape
    try:
        z = np.linalg.solve(U, linalg.vectorize(X))
    except np.linalg.LinAlgError as exc:
        raise SingularUError(str(exc)) from exc
    return linalg.unvectorize(z, m, n)


def g_of_f_jacobian(F, eps_f: float) -> np.ndarray:
    """d vec(g(F)) / d vec(F) via the commutation-matrix construction."""
    F = linalg.require_square(F)
    m = F.shape[0]
    FtF = F.T @ F
    nrm = linalg.frobenius_norm(FtF)
    v = linalg.vectorize(FtF)[:, None]
    proj = np.eye(m * m)
    if nrm > 0.0:
        proj -= (v @ v.T) / ((nrm + eps_f) * nrm)
    K = linalg.commutation_matrix(m)
    return (proj / (nrm + eps_f)) @ (np.eye(m * m) + K) @ linalg.kron(np.eye(m), F.T)


def kron_grad_F(model: EignnModel, X, S, D) -> np.ndarray:
    """grad_F assembled literally from the dense vec-calculus chain rule."""
    X, U = _build_u(model, X, S)
    m, n = X.shape
    D = linalg.as_matrix(D)
    Z = kron_forward(model, X, S)
    J = g_of_f_jacobian(model.F, model.eps_f)
    try:
        adj = np.linalg.solve(U, linalg.vectorize(model.B.T @ D))
    except np.linalg.LinAlgError as exc:
        raise SingularUError(str(exc)) from exc
    grad_vec = model.gamma * (J.T @ (linalg.kron(Z @ S, np.eye(m)) @ adj))
    return linalg.unvectorize(grad_vec, m, m)


def finite_difference_grad(loss_fn, at, step=1e-6) -> np.ndarray:
    """Central differences of a scalar matrix function, entry by entry."""
    if step <= 0.0:
        raise ValueError("step must be positive")
    at = linalg.as_matrix(at)
    grad = np.zeros_like(at)
    for i in range(at.shape[0]):
        for j in range(at.shape[1]):
            probe = at.copy()
            probe[i, j] = at[i, j] + step
            up = loss_fn(probe)
            probe[i, j] = at[i, j] - step
            down = loss_fn(probe)
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteLossError(f"loss non-finite near entry ({i},{j})")
            grad[i, j] = (up - down) / (2.0 * step)
    return grad


def cache_from_dense(S) -> SpectralCache:
    """SpectralCache for an explicit symmetric matrix (tests and verification)."""
    eig = linalg.sym_eig(S)
    return SpectralCache(
        n=S.shape[0],
        eigenvalues=eig.eigenvalues,
        eigenvectors=eig.eigenvectors,
        content_hash=0,
    )


def random_instance(rng, m_max=6, n_max=8, m_y_max=4):
    """Small random (model, X, S, labels, mask) for equivalence checks.

    eps_f is drawn proportional to ||F^T F||_F so the contraction factor
    stays below ~0.95 and the fixed-point iteration converges in a few
    hundred steps at tol 1e-12.
    """
    m = int(rng.integers(1, m_max + 1))
    n = int(rng.integers(2, n_max + 1))
    m_y = int(rng.integers(1, m_y_max + 1))
    A = np.triu((rng.random((n, n)) < 0.4).astype(np.float64), 1)
    A = A + A.T + np.eye(n)
    scale = 1.0 / np.sqrt(A.sum(axis=1))
    S = scale[:, None] * A * scale[None, :]
    S = 0.5 * (S + S.T)
    F = rng.normal(size=(m, m))
    nrm = float(np.linalg.norm(F.T @ F))
    model = EignnModel(
        F=F,
        B=rng.normal(size=(m_y, m)),
        gamma=float(0.5 + 0.5 * rng.random()),
        eps_f=float((0.05 + 0.45 * rng.random()) * max(nrm, 1e-3)),
    )
    X = rng.normal(size=(m, n))
    labels = rng.integers(0, m_y, size=n)
    mask = np.ones(n, dtype=bool)
    return model, X, S, labels, mask


def relative_error(approx, reference, floor=1e-8) -> float:
    """Max entrywise |approx-ref| / max(floor, |ref|)."""
    approx = np.asarray(approx, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    denom = np.maximum(floor, np.abs(reference))
    if approx.size == 0:
        return 0.0
    return float(np.max(np.abs(approx - reference) / denom))
