"""Deterministic numeric kernels: cosine similarity, min-max normalization,
row-wise softmax, and the pose-aware cross-attention fusion.

All functions are pure and operate on immutable inputs; they are safe to call
concurrently from any number of threads.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, ShapeMismatchForResidual, ZeroNormVector
from .validation import check_matrix, check_same_dim, check_square, check_vector


@dataclass(frozen=True)
class AttentionWeights:
    """Square query/key/value projection matrices sharing one dimension d."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def checked(self, d: int) -> "AttentionWeights":
        return AttentionWeights(
            w_q=check_square(self.w_q, d, "w_q"),
            w_k=check_square(self.w_k, d, "w_k"),
            w_v=check_square(self.w_v, d, "w_v"),
        )

    @classmethod
    def identity(cls, d: int) -> "AttentionWeights":
        eye = np.eye(d)
        return cls(w_q=eye, w_k=eye, w_v=eye)


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, in [-1, 1].

    Raises DimensionMismatch on length disagreement and ZeroNormVector when
    either argument has zero norm (degenerate embedding; caller decides the
    fallback).
    """
    va = check_vector(a, "a")
    vb = check_vector(b, "b")
    check_same_dim(va, vb, "a", "b")
    norm_a = float(np.linalg.norm(va))
    norm_b = float(np.linalg.norm(vb))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroNormVector("cosine similarity undefined for zero-norm vector")
    return float(np.dot(va, vb) / (norm_a * norm_b))


def min_max_normalize(scores) -> np.ndarray:
    """Map scores affinely onto [0, 1]: (s - min) / (max - min).

    Order-preserving (argsort unchanged, ties included). When all scores are
    equal the output is all zeros, which keeps every candidate below any
    positive gate threshold (conservative, structural-only behavior).
    """
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size == 0:
        raise EmptyInput("min_max_normalize requires a non-empty list")
    if not np.all(np.isfinite(arr)):
        raise ValueError("min_max_normalize requires finite scores")
    lo = arr.min()
    hi = arr.max()
    if hi == lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction for overflow safety.

    Each output row is nonnegative and sums to 1; softmax is invariant under
    per-row additive shifts.
    """
    arr = check_matrix(m, "m")
    shifted = arr - arr.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def pose_cross_attention(f_p, f_i, w: AttentionWeights) -> tuple[np.ndarray, np.ndarray]:
    """Fuse pose and image token features via scaled cross-attention.

    Pose tokens act as queries over image tokens:

        attn = softmax_rows((f_p W_q^T)(f_i W_k^T)^T / sqrt(d))
        f_ca = attn @ (f_i W_v^T)
        f_v  = f_i + f_ca

    Rows are token vectors, so applying a projection W to each token is
    right-multiplication by W^T. The residual requires equal token counts;
    mismatched shapes raise rather than broadcast, since silent broadcasting
    hides data errors.

    Returns (f_ca, f_v), both shaped like f_i.
    """
    fp = check_matrix(f_p, "f_p")
    fi = check_matrix(f_i, "f_i")
    d = fp.shape[1]
    check_same_dim(fp, fi, "f_p", "f_i")
    w = w.checked(d)
    if fp.shape[0] != fi.shape[0]:
        raise ShapeMismatchForResidual(
            f"residual needs equal token counts, got {fp.shape[0]} pose vs {fi.shape[0]} image"
        )
    queries = fp @ w.w_q.T
    keys = fi @ w.w_k.T
    values = fi @ w.w_v.T
    attn = softmax_rows(queries @ keys.T / np.sqrt(d))
    f_ca = attn @ values
    f_v = fi + f_ca
    return f_ca, f_v
