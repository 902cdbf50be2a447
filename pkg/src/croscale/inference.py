"""Dirichlet observation model over belief maps and its evaluation tools.

An observed representation y at belief-map pixel (u, v) is modeled as
Dirichlet(1 + theta * Z[u, v]). Likelihood heat maps store log-densities to
stay numerically safe for large theta; rendering min-max normalizes for
display only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .core_types import BeliefMap, PixelCoord, SimplexVec
from .errors import ArgumentError

EPS_CLAMP = 1e-12


@dataclass(frozen=True)
class DirichletModel:
    """Observation model p(y | Z[u,v]) = Dirichlet(1 + theta Z[u,v])."""

    theta: float = 5.0

    def __post_init__(self):
        if not (math.isfinite(self.theta) and self.theta >= 0.0):
            raise ArgumentError(f"theta must be finite and >= 0, got {self.theta}")


@dataclass(frozen=True)
class HeatMap:
    """Per-pixel log-density grid."""

    log_density: np.ndarray

    def __post_init__(self):
        ld = np.asarray(self.log_density, dtype=np.float64)
        if ld.ndim != 2:
            raise ArgumentError("heat map must be 2D")
        if not np.all(np.isfinite(ld)):
            raise ArgumentError("heat map entries must be finite")
        ld.setflags(write=False)
        object.__setattr__(self, "log_density", ld)

    @property
    def height(self) -> int:
        return self.log_density.shape[0]

    @property
    def width(self) -> int:
        return self.log_density.shape[1]


def dirichlet_logpdf(y: SimplexVec | np.ndarray, alpha: np.ndarray) -> float:
    """Dirichlet log-density of y under concentration alpha.

    log B(alpha)^-1 + sum_c (alpha_c - 1) ln y_c, with y clamped at 1e-12
    inside the logarithm.
    """
    yv = y.probs if isinstance(y, SimplexVec) else np.asarray(y, dtype=np.float64)
    a = np.asarray(alpha, dtype=np.float64)
    if a.shape != yv.shape:
        raise ArgumentError(f"alpha shape {a.shape} does not match y shape {yv.shape}")
    if np.any(a <= 0.0) or not np.all(np.isfinite(a)):
        raise ArgumentError("concentration entries must be positive and finite")
    log_norm = gammaln(a.sum()) - gammaln(a).sum()
    return float(log_norm + ((a - 1.0) * np.log(np.maximum(yv, EPS_CLAMP))).sum())


def likelihood_map(bm: BeliefMap, y: SimplexVec, model: DirichletModel) -> HeatMap:
    """Log-density of y under Dirichlet(1 + theta Z[u,v]) for every pixel.

    Belief pixels sum to 1, so the concentration total C + theta is constant
    across the map and its log-gamma is hoisted out of the per-pixel work.
    """
    if len(y) != bm.channels:
        raise ArgumentError(
            f"representation has {len(y)} channels, belief map has {bm.channels}"
        )
    theta = model.theta
    z = bm.values
    logy = np.log(np.maximum(y.probs, EPS_CLAMP))
    alpha = 1.0 + theta * z
    const = gammaln(bm.channels + theta)
    ld = theta * (z @ logy) + const - gammaln(alpha).sum(axis=2)
    return HeatMap(ld)


def recall_at_k(heat: HeatMap, truth: PixelCoord, k_percent: float) -> bool:
    """True when the truth pixel ranks inside the top ceil(k% * H * W) values.

    Tie-friendly: only pixels strictly greater than the truth value count
    against the budget.
    """
    if not 0.0 < k_percent <= 100.0:
        raise ArgumentError(f"k_percent must be in (0, 100], got {k_percent}")
    h, w = heat.height, heat.width
    if not (0 <= truth.u < h and 0 <= truth.v < w):
        raise ArgumentError(f"truth pixel {truth} outside heat map {h}x{w}")
    budget = math.ceil(k_percent / 100.0 * h * w)
    truth_val = heat.log_density[truth.u, truth.v]
    n_greater = int(np.count_nonzero(heat.log_density > truth_val))
    return n_greater < budget


def segmentation_render(bm: BeliefMap) -> np.ndarray:
    """Per-pixel argmax class indices; ties resolve to the lowest channel."""
    return np.argmax(bm.values, axis=2)


def belief_profile(bm: BeliefMap, start: PixelCoord, end: PixelCoord,
                   samples: int) -> np.ndarray:
    """Channel values at evenly spaced nearest-pixel samples on a segment.

    Returns (samples, C); endpoints included.
    """
    if samples < 1:
        raise ArgumentError("samples must be >= 1")
    for p in (start, end):
        if not (0 <= p.u < bm.height and 0 <= p.v < bm.width):
            raise ArgumentError(f"profile endpoint {p} outside belief map")
    us = np.rint(np.linspace(start.u, end.u, samples)).astype(np.int64)
    vs = np.rint(np.linspace(start.v, end.v, samples)).astype(np.int64)
    return bm.values[us, vs]


def render_heat_pgm(heat: HeatMap) -> bytes:
    """8-bit grayscale PGM of a heat map, min-max normalized."""
    ld = heat.log_density
    lo = ld.min()
    hi = ld.max()
    if hi > lo:
        img = np.rint((ld - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        img = np.zeros_like(ld, dtype=np.uint8)
    header = f"P5\n{heat.width} {heat.height}\n255\n".encode("ascii")
    return header + img.tobytes()


def render_classes_pgm(classes: np.ndarray) -> bytes:
    """8-bit grayscale PGM of a class-index grid, classes spread over [0, 255]."""
    classes = np.asarray(classes)
    k = max(int(classes.max()) + 1, 2)
    img = np.rint(classes * (255.0 / (k - 1))).astype(np.uint8)
    h, w = classes.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return header + img.tobytes()
