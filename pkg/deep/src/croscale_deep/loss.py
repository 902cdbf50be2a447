"""Bhattacharyya similarity and the two-positive NT-Xent loss in torch."""

from __future__ import annotations

import torch

EPS = 1e-12


def bhattacharyya_matrix(z: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """(A, C) x (V, C) distributions -> (A, V) similarity in [0, 1]."""
    return torch.sqrt(z.clamp_min(EPS)) @ torch.sqrt(y.clamp_min(EPS)).T


def ntxent_two_positive(anchors: torch.Tensor, views: torch.Tensor,
                        tau: float = 1.0) -> torch.Tensor:
    """Mean loss over anchors; each anchor's two positives are views[i, 0/1]
    and the denominator runs over every view in the batch.

    anchors: (bn, C) simplex rows; views: (bn, 2, C).
    """
    bn, c = anchors.shape
    flat = views.reshape(2 * bn, c)
    logits = bhattacharyya_matrix(anchors, flat) / tau        # (bn, 2bn)
    lse = torch.logsumexp(logits, dim=1)
    idx = torch.arange(bn, device=anchors.device)
    pos = logits[idx, 2 * idx] + logits[idx, 2 * idx + 1]
    return (2.0 * lse - pos).mean()
