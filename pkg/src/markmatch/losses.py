"""Dense-batch similarity objective and its exact gradients.

A batch of n aligned embedding pairs yields an n x n similarity matrix
S[i, j] = <a_i, b_j> / temperature.  Matched pairs sit on the diagonal, so
the objective combines row-wise and column-wise softmax cross-entropy
against the diagonal with a binary cross-entropy term on sigmoid-activated
diagonal scores:

    total = 0.5 * (row_ce + col_ce) + alpha * diag_bce

All functions work on float64 numpy arrays and use max-subtraction /
log1p stabilization so that entries up to +-1000 stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossConfig:
    """Fixed hyperparameters of the objective (not learnable)."""

    temperature: float = 0.07
    alpha: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")


@dataclass(frozen=True)
class LossBreakdown:
    """Loss components; ``total`` always equals the composite formula exactly."""

    row_ce: float
    col_ce: float
    diag_bce: float
    total: float


def _as_embedding_matrix(embs, name: str) -> np.ndarray:
    mat = np.asarray(embs, dtype=np.float64)
    if mat.ndim == 1:
        mat = mat[None, :]
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty list of equal-length vectors")
    return mat


def similarity_matrix(emb_a, emb_b, cfg: LossConfig) -> np.ndarray:
    """Scaled dot products between two aligned embedding sets.

    Returns the n x n matrix S with S[i, j] = <emb_a[i], emb_b[j]> / temperature.
    """
    a = _as_embedding_matrix(emb_a, "emb_a")
    b = _as_embedding_matrix(emb_b, "emb_b")
    if a.shape != b.shape:
        raise ValueError(f"embedding sets differ in shape: {a.shape} vs {b.shape}")
    return (a @ b.T) / cfg.temperature


def _check_square_finite(S) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] < 1:
        raise ValueError(f"similarity matrix must be square and non-empty, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("similarity matrix contains non-finite entries")
    return S


def _log_softmax(S: np.ndarray, axis: int) -> np.ndarray:
    shifted = S - S.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def _softmax(S: np.ndarray, axis: int) -> np.ndarray:
    shifted = S - S.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x) without overflow for large |x|
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def dual_loss(S, cfg: LossConfig) -> LossBreakdown:
    """Composite loss over a similarity matrix whose positives are diagonal."""
    S = _check_square_finite(S)
    n = S.shape[0]
    diag = np.diag(S)
    row_ce = float(-np.mean(np.diag(_log_softmax(S, axis=1))))
    col_ce = float(-np.mean(np.diag(_log_softmax(S, axis=0))))
    diag_bce = float(np.mean(_softplus(-diag)))  # -log sigmoid(S_ii), labels all 1
    total = 0.5 * (row_ce + col_ce) + cfg.alpha * diag_bce
    return LossBreakdown(row_ce=row_ce, col_ce=col_ce, diag_bce=diag_bce, total=float(total))


def dual_loss_grad(S, cfg: LossConfig) -> np.ndarray:
    """d(total)/dS in closed form.

    (1/(2n)) * [(row softmax - I) + (col softmax - I)]
      + (alpha/n) * diag(sigmoid(S_ii) - 1)
    """
    S = _check_square_finite(S)
    n = S.shape[0]
    eye = np.eye(n)
    grad = (_softmax(S, axis=1) - eye + _softmax(S, axis=0) - eye) / (2.0 * n)
    grad[np.diag_indices(n)] += cfg.alpha / n * (_sigmoid(np.diag(S)) - 1.0)
    return grad


def chain_to_embeddings(grad_S, emb_a, emb_b, cfg: LossConfig):
    """Chain d(total)/dS through the scaled dot product to both embedding sets.

    Returns (grads for emb_a, grads for emb_b); rows align with the inputs.
    """
    G = np.asarray(grad_S, dtype=np.float64)
    a = _as_embedding_matrix(emb_a, "emb_a")
    b = _as_embedding_matrix(emb_b, "emb_b")
    n = a.shape[0]
    if G.shape != (n, n) or b.shape != a.shape:
        raise ValueError(
            f"shape mismatch: grad_S {G.shape}, emb_a {a.shape}, emb_b {b.shape}"
        )
    grad_a = (G @ b) / cfg.temperature
    grad_b = (G.T @ a) / cfg.temperature
    return grad_a, grad_b


def pairwise_bce_loss(score: float, label: int) -> float:
    """Binary cross-entropy of a sigmoid-activated pair score.

    The isolated-pair baseline objective: label 1 marks a same-writer pair.
    """
    if not np.isfinite(score):
        raise ValueError(f"score must be finite, got {score}")
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    s = float(score)
    # max(s,0) - s*y + log(1+e^-|s|) is the stabilized form of
    # -[y log sigmoid(s) + (1-y) log(1 - sigmoid(s))]
    return max(s, 0.0) - s * label + float(np.log1p(np.exp(-abs(s))))
