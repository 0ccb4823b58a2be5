"""Infinite-depth model core: norm-constrained propagation weights, spectral
closed-form forward pass, cross-entropy loss, and analytic gradients.

The hidden state is the fixed point of Z = gamma * g(F) Z S + X.  With
g(F) = Q_F L_F Q_F^T and S = Q_S L_S Q_S^T, the fixed point has the closed
form Z = Q_F (G o (Q_F^T X Q_S)) Q_S^T where G_ij = 1/(1 - gamma*l_Fi*l_Sj).
Gradients are computed analytically from the same eigendecompositions; the
backward pass reuses the forward trace and never re-eigendecomposes.
"""

import os
import struct
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import (
    DimensionMismatchError,
    EmptyMaskError,
    NonFiniteResultError,
    TraceMismatchError,
)

MODEL_MAGIC = b"EIGM"
MODEL_VERSION = 1


@dataclass
class EignnModel:
    F: np.ndarray  # m x m propagation parameter
    B: np.ndarray  # m_y x m output map
    gamma: float = 1.0
    eps_f: float = 1e-6

    def __post_init__(self):
        self.F = linalg.require_square(self.F)
        self.B = linalg.as_matrix(self.B)
        if self.B.shape[1] != self.F.shape[0]:
            raise DimensionMismatchError(
                f"B has {self.B.shape[1]} columns for m={self.F.shape[0]}"
            )
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.eps_f <= 0.0:
            raise ValueError(f"eps_f must be positive, got {self.eps_f}")
        if not (np.all(np.isfinite(self.F)) and np.all(np.isfinite(self.B))):
            raise NonFiniteResultError("model parameters must be finite")

    @property
    def m(self) -> int:
        return self.F.shape[0]

    @property
    def m_y(self) -> int:
        return self.B.shape[0]

    def copy(self) -> "EignnModel":
        return EignnModel(self.F.copy(), self.B.copy(), self.gamma, self.eps_f)


@dataclass
class ForwardTrace:
    """Per-pass intermediates reused by the backward pass."""

    eig_f: linalg.SymmetricEigen
    g_norm: float  # ||F^T F||_F
    G: np.ndarray  # m x n resolvent factors
    W: np.ndarray  # G o (Q_F^T X Q_S), the fixed point in the joint eigenbasis
    Z: np.ndarray  # m x n fixed point
    logits: np.ndarray  # m_y x n


def g_of_f(F, eps_f: float) -> np.ndarray:
    """F^T F / (||F^T F||_F + eps_f): symmetric PSD, Frobenius norm < 1."""
    F = linalg.require_square(F)
    T = F.T @ F
    T = 0.5 * (T + T.T)
    return T / (linalg.frobenius_norm(T) + eps_f)


def resolvent_factors(gamma, lam_f, lam_s) -> np.ndarray:
    """G_ij = 1 / (1 - gamma * lam_f_i * lam_s_j), all entries positive."""
    denom = 1.0 - gamma * np.outer(lam_f, lam_s)
    if np.any(denom <= 0.0) or not np.all(np.isfinite(denom)):
        raise NonFiniteResultError("resolvent denominator is not strictly positive")
    return 1.0 / denom


def spectral_forward(model: EignnModel, X, s_cache) -> ForwardTrace:
    """Closed-form forward pass through the g(F) and S eigendecompositions."""
    X = linalg.as_matrix(X)
    if X.shape[0] != model.m:
        raise DimensionMismatchError(f"X has {X.shape[0]} rows for m={model.m}")
    if X.shape[1] != s_cache.n:
        raise DimensionMismatchError(
            f"X has {X.shape[1]} columns but the cache covers {s_cache.n} nodes"
        )
    gF = g_of_f(model.F, model.eps_f)
    g_norm = linalg.frobenius_norm(model.F.T @ model.F)
    eig_f = linalg.sym_eig(gF)
    Q_f = eig_f.eigenvectors
    Q_s = s_cache.eigenvectors
    G = resolvent_factors(model.gamma, eig_f.eigenvalues, s_cache.eigenvalues)
    W = G * (Q_f.T @ (X @ Q_s))
    Z = (Q_f @ W) @ Q_s.T
    logits = model.B @ Z
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(logits))):
        raise NonFiniteResultError("forward pass produced non-finite values")
    return ForwardTrace(eig_f=eig_f, g_norm=g_norm, G=G, W=W, Z=Z, logits=logits)


def softmax_columns(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def loss_and_output_grad(logits, labels, mask):
    """Mean softmax cross-entropy over masked nodes and its logit gradient."""
    logits = linalg.as_matrix(logits)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise EmptyMaskError("loss requires at least one masked node")
    cols = logits[:, idx]
    y = np.asarray(labels)[idx]
    if np.any(y < 0) or np.any(y >= logits.shape[0]):
        raise ValueError("every masked node must carry a valid label")
    shifted = cols - cols.max(axis=0, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=0))
    loss = float(np.mean(log_z - shifted[y, np.arange(idx.size)]))
    D = np.zeros_like(logits)
    p = softmax_columns(cols)
    p[y, np.arange(idx.size)] -= 1.0
    D[:, idx] = p / idx.size
    return loss, D


def grad_f_from_r(F, gamma, eps_f, R) -> np.ndarray:
    """Map the sensitivity matrix R through the derivative of the norm-ball
    projection: gamma/(nrm+eps) * F((R+R^T) - 2<F^T F, R>/(nrm^2+eps*nrm) F^T F)."""
    FtF = F.T @ F
    nrm = float(np.linalg.norm(FtF))
    inner = float(np.sum(FtF * R))
    if nrm > 0.0:
        correction = (2.0 * inner / (nrm * nrm + eps_f * nrm)) * FtF
    else:
        correction = np.zeros_like(FtF)
    return (gamma / (nrm + eps_f)) * (F @ ((R + R.T) - correction))


def grads_from_coeffs(F, B, gamma, eps_f, trace: ForwardTrace, DQ, lam_s):
    """Shared gradient core; DQ = D @ Q_S.

    R = Q_F (G o (Q_F^T B^T D Q_S)) Q_S^T S Z^T collapses to pure small-matrix
    products because Q_S^T S Z^T = L_S W^T Q_F^T.
    """
    Q_f = trace.eig_f.eigenvectors
    P = trace.G * (Q_f.T @ (B.T @ DQ))
    R = Q_f @ ((P * lam_s[None, :]) @ trace.W.T) @ Q_f.T
    grad_F = grad_f_from_r(F, gamma, eps_f, R)
    grad_B = (DQ @ trace.W.T) @ Q_f.T
    return grad_F, grad_B


def _check_trace(model: EignnModel, trace: ForwardTrace, s_cache, D) -> np.ndarray:
    D = linalg.as_matrix(D)
    if D.shape != trace.logits.shape:
        raise TraceMismatchError(f"D has shape {D.shape}, logits {trace.logits.shape}")
    if trace.Z.shape != (model.m, s_cache.n) or trace.eig_f.n != model.m:
        raise TraceMismatchError("trace does not match the model/cache shapes")
    return D


def backward(model: EignnModel, X, s_cache, trace: ForwardTrace, D):
    """Analytic (grad_F, grad_B) for the loss whose logit gradient is D."""
    D = _check_trace(model, trace, s_cache, D)
    DQ = D @ s_cache.eigenvectors
    return grads_from_coeffs(
        model.F, model.B, model.gamma, model.eps_f, trace, DQ, s_cache.eigenvalues
    )


def input_grad(model: EignnModel, s_cache, trace: ForwardTrace, D) -> np.ndarray:
    """d loss / d X; the fixed point is linear in X so this mirrors the forward."""
    D = _check_trace(model, trace, s_cache, D)
    Q_f = trace.eig_f.eigenvectors
    Q_s = s_cache.eigenvectors
    P = trace.G * (Q_f.T @ (model.B.T @ (D @ Q_s)))
    return (Q_f @ P) @ Q_s.T


def contraction_factor(model: EignnModel, s_cache) -> float:
    """gamma * ||g(F)||_F * max|eig(S)|, strictly below 1 by construction."""
    delta = linalg.frobenius_norm(g_of_f(model.F, model.eps_f))
    lam = float(np.max(np.abs(s_cache.eigenvalues))) if s_cache.n else 0.0
    return model.gamma * delta * lam


def save_model(model: EignnModel, path):
    """Little-endian binary dump: magic, version, m, m_y, gamma, eps_f, F, B."""
    payload = (
        MODEL_MAGIC
        + struct.pack("<I", MODEL_VERSION)
        + struct.pack("<QQ", model.m, model.m_y)
        + struct.pack("<dd", model.gamma, model.eps_f)
        + np.ascontiguousarray(model.F).tobytes()
        + np.ascontiguousarray(model.B).tobytes()
    )
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def load_model(path) -> EignnModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    header = struct.calcsize("<4sIQQdd")
    if len(blob) < header:
        raise ValueError(f"model file {path} is truncated")
    magic, version, m, m_y, gamma, eps_f = struct.unpack("<4sIQQdd", blob[:header])
    if magic != MODEL_MAGIC:
        raise ValueError(f"bad magic in model file {path}")
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model file version {version}")
    expected = header + 8 * (m * m + m_y * m)
    if len(blob) != expected:
        raise ValueError(f"model file {path} has {len(blob)} bytes, expected {expected}")
    F = np.frombuffer(blob, dtype="<f8", count=m * m, offset=header).reshape(m, m)
    B = np.frombuffer(blob, dtype="<f8", count=m_y * m, offset=header + 8 * m * m)
    return EignnModel(F.copy(), B.reshape(m_y, m).copy(), gamma, eps_f)
