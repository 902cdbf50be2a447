"""Bhattacharyya similarity and the two-positive NT-Xent contrastive loss.

Both encoders emit discrete distributions, so similarity is the Bhattacharyya
coefficient s(z, y) = sum_c sqrt(z_c * y_c) in [0, 1]. Each anchor has two
positive views; the loss denominator runs over every view in the batch,
including the anchor's own positives. Analytic gradients are provided for
both and are checked against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError

EPS_CLAMP = 1e-12


@dataclass(frozen=True)
class LossBatch:
    """Aligned anchors and view pairs for one minibatch.

    anchors: (bn, C) simplex rows z_ij.
    views:   (bn, 2, C) simplex rows, views[i, k] = y^(k+1)_ij.
    tau:     temperature, > 0.
    """

    anchors: np.ndarray
    views: np.ndarray
    tau: float = 1.0

    def __post_init__(self):
        a = np.asarray(self.anchors, dtype=np.float64)
        v = np.asarray(self.views, dtype=np.float64)
        if a.ndim != 2 or v.ndim != 3 or v.shape[0] != a.shape[0] \
                or v.shape[1] != 2 or v.shape[2] != a.shape[1]:
            raise ArgumentError(
                f"misaligned batch: anchors {a.shape}, views {v.shape}"
            )
        if not self.tau > 0:
            raise ArgumentError(f"tau must be > 0, got {self.tau}")
        object.__setattr__(self, "anchors", a)
        object.__setattr__(self, "views", v)
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def n_anchors(self) -> int:
        return self.anchors.shape[0]


def bhattacharyya(z: np.ndarray, y: np.ndarray) -> float:
    """Bhattacharyya coefficient between two discrete distributions."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if z.shape != y.shape:
        raise ArgumentError(f"length mismatch: {z.shape} vs {y.shape}")
    return float(np.sqrt(z * y).sum())


def bhattacharyya_matrix(zs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """All-pairs similarity: (A, C) x (V, C) -> (A, V)."""
    return np.sqrt(zs) @ np.sqrt(ys).T


def bhattacharyya_grad(z: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the coefficient w.r.t. both arguments.

    ds/dz_c = sqrt(y_c) / (2 sqrt(z_c)), entries clamped at EPS_CLAMP so
    one-hot inputs stay finite.
    """
    z = np.maximum(np.asarray(z, dtype=np.float64), EPS_CLAMP)
    y = np.maximum(np.asarray(y, dtype=np.float64), EPS_CLAMP)
    sz = np.sqrt(z)
    sy = np.sqrt(y)
    return sy / (2.0 * sz), sz / (2.0 * sy)


def cosine_similarity(z: np.ndarray, y: np.ndarray) -> float:
    """Cosine similarity; not used by the loss, only by the particle-filter
    baseline weighting mode."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if z.shape != y.shape:
        raise ArgumentError(f"length mismatch: {z.shape} vs {y.shape}")
    nz = np.linalg.norm(z)
    ny = np.linalg.norm(y)
    if nz == 0.0 or ny == 0.0:
        return 0.0
    return float(np.dot(z, y) / (nz * ny))


def _logits(batch: LossBatch) -> np.ndarray:
    """(bn, 2bn) matrix of s(z_ij, y^mu_qk) / tau, view-major columns
    (q, k) x mu flattened in C order."""
    bn, c = batch.anchors.shape
    flat_views = batch.views.reshape(2 * bn, c)
    return bhattacharyya_matrix(batch.anchors, flat_views) / batch.tau


def ntxent_loss(batch: LossBatch) -> float:
    """Mean two-positive NT-Xent loss over all anchors.

    Per anchor: -sum over its two positives of log softmax over every view
    in the batch. Computed with max-subtraction for stability.
    """
    bn = batch.n_anchors
    logits = _logits(batch)
    m = logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(logits - m).sum(axis=1)) + m[:, 0]
    pos = logits.reshape(bn, bn, 2)[np.arange(bn), np.arange(bn), :]
    per_anchor = 2.0 * lse - pos.sum(axis=1)
    return float(per_anchor.mean())


def ntxent_grad(batch: LossBatch) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of the mean loss w.r.t. every anchor and view.

    Returns (d_anchors: (bn, C), d_views: (bn, 2, C)).
    """
    bn, c = batch.anchors.shape
    logits = _logits(batch)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    soft = e / e.sum(axis=1, keepdims=True)          # (bn, 2bn)

    # dL/ds[a, v] for the mean loss: (2*softmax - positive indicator) / (tau*bn)
    ds = 2.0 * soft
    rows = np.arange(bn)
    ds[rows, 2 * rows] -= 1.0
    ds[rows, 2 * rows + 1] -= 1.0
    ds /= batch.tau * bn

    za = np.maximum(batch.anchors, EPS_CLAMP)
    yv = np.maximum(batch.views.reshape(2 * bn, c), EPS_CLAMP)
    sqz = np.sqrt(za)                                 # (bn, C)
    sqy = np.sqrt(yv)                                 # (2bn, C)

    # s = sum_c sqz[a,c] sqy[v,c]; chain through both square roots
    d_anchors = (ds @ sqy) / (2.0 * sqz)
    d_views = (ds.T @ sqz) / (2.0 * sqy)
    return d_anchors, d_views.reshape(bn, 2, c)
