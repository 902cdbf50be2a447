"""Geo-referenced rasters, simplex vectors, belief maps and coordinate transforms.

Conventions used everywhere in the toolkit:

* pixel coordinate (u, v) = (row, col), origin at the top-left pixel;
* heading is measured counter-clockwise in radians, normalized to (-pi, pi];
* the patch frame maps the u axis onto world x and the v axis onto world y,
  so ``world = R(heading) @ (u, v) / scale + (x0, y0)``.

All types are immutable after construction; every operation here is a pure
function, so values are safe to share between concurrent tasks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError

SIMPLEX_ATOL = 1e-9


def normalize_heading(heading: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    h = math.remainder(float(heading), 2.0 * math.pi)
    if h <= -math.pi:
        h += 2.0 * math.pi
    return h


@dataclass(frozen=True)
class WorldPose:
    """2D pose in the local planar world frame (meters, radians)."""

    x: float
    y: float
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "heading", normalize_heading(self.heading))


@dataclass(frozen=True)
class PixelCoord:
    """Integer pixel coordinate, u = row, v = column."""

    u: int
    v: int

    def __post_init__(self):
        object.__setattr__(self, "u", int(self.u))
        object.__setattr__(self, "v", int(self.v))


@dataclass(frozen=True)
class Raster:
    """Geo-referenced multi-channel 2D grid.

    Attributes
    ----------
    values:
        float64 array of shape (height, width, channels); all finite.
    scale:
        Geospatial scale in pixel/m, > 0.
    geo_pose:
        World pose of pixel (0, 0) plus the in-plane rotation of the grid.
    """

    values: np.ndarray
    scale: float
    geo_pose: WorldPose = field(default_factory=lambda: WorldPose(0.0, 0.0, 0.0))

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, :, np.newaxis]
        if v.ndim != 3:
            raise ArgumentError(f"raster values must be 2D or 3D, got ndim={v.ndim}")
        if min(v.shape) < 1:
            raise ArgumentError(f"raster dimensions must be >= 1, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ArgumentError("raster values must all be finite")
        if not float(self.scale) > 0.0:
            raise ArgumentError(f"raster scale must be > 0, got {self.scale}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class SimplexVec:
    """Length-C discrete probability distribution.

    Entries must be non-negative and sum to 1 within 1e-9.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise ArgumentError("simplex vector must be a non-empty 1D array")
        if not np.all(np.isfinite(p)):
            raise ArgumentError("simplex vector entries must be finite")
        if np.any(p < 0.0):
            raise ArgumentError(f"simplex vector entries must be >= 0, min={p.min()}")
        s = float(p.sum())
        if abs(s - 1.0) > SIMPLEX_ATOL:
            raise ArgumentError(f"simplex vector must sum to 1 within {SIMPLEX_ATOL}, got {s}")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __len__(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class BeliefMap:
    """H x W grid of per-pixel discrete distributions over C categories.

    ``values`` has shape (height, width, C); every pixel's channel slice is a
    valid simplex. Encoder outputs are renormalized before construction, so
    the constructor only verifies.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ArgumentError(f"belief map values must be (H, W, C), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ArgumentError("belief map values must all be finite")
        if np.any(v < 0.0):
            raise ArgumentError("belief map entries must be >= 0")
        sums = v.sum(axis=2)
        worst = float(np.abs(sums - 1.0).max())
        if worst > SIMPLEX_ATOL:
            raise ArgumentError(
                f"belief map pixels must sum to 1 within {SIMPLEX_ATOL}, worst deviation {worst}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def bilinear_sample(raster: Raster, row: float, col: float) -> np.ndarray:
    """Channel-wise bilinear interpolation at a fractional pixel coordinate.

    Exact stored values are returned at integer coordinates. Coordinates must
    satisfy 0 <= row <= height-1 and 0 <= col <= width-1.
    """
    v = raster.values
    h, w = v.shape[0], v.shape[1]
    if not (0.0 <= row <= h - 1 and 0.0 <= col <= w - 1):
        raise ArgumentError(
            f"sample coordinate ({row}, {col}) outside raster bounds {h}x{w}"
        )
    r0 = min(int(math.floor(row)), h - 2) if h > 1 else 0
    c0 = min(int(math.floor(col)), w - 2) if w > 1 else 0
    fr = row - r0
    fc = col - c0
    r1 = min(r0 + 1, h - 1)
    c1 = min(c0 + 1, w - 1)
    return (
        v[r0, c0] * (1.0 - fr) * (1.0 - fc)
        + v[r0, c1] * (1.0 - fr) * fc
        + v[r1, c0] * fr * (1.0 - fc)
        + v[r1, c1] * fr * fc
    )


def bilinear_sample_many(raster: Raster, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Vectorized :func:`bilinear_sample` for arrays of coordinates.

    Returns an array of shape rows.shape + (channels,). Same bounds contract
    as the scalar version, checked over the whole batch.
    """
    v = raster.values
    h, w = v.shape[0], v.shape[1]
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    if rows.size and (
        rows.min() < 0.0 or rows.max() > h - 1 or cols.min() < 0.0 or cols.max() > w - 1
    ):
        raise ArgumentError("sample coordinates outside raster bounds")
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    np.clip(r0, 0, max(h - 2, 0), out=r0)
    np.clip(c0, 0, max(w - 2, 0), out=c0)
    fr = (rows - r0)[..., np.newaxis]
    fc = (cols - c0)[..., np.newaxis]
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    return (
        v[r0, c0] * (1.0 - fr) * (1.0 - fc)
        + v[r0, c1] * (1.0 - fr) * fc
        + v[r1, c0] * fr * (1.0 - fc)
        + v[r1, c1] * fr * fc
    )


def patch_to_world(pose: WorldPose, scale: float, u: float, v: float) -> tuple[float, float]:
    """Map a patch pixel coordinate to world meters.

    Rotates (u, v) by pose.heading, divides by scale, translates by the pose
    position. Exact inverse of :func:`world_to_patch`.
    """
    if not scale > 0.0:
        raise ArgumentError(f"scale must be > 0, got {scale}")
    ch = math.cos(pose.heading)
    sh = math.sin(pose.heading)
    x = (ch * u - sh * v) / scale + pose.x
    y = (sh * u + ch * v) / scale + pose.y
    return (x, y)


def world_to_patch(pose: WorldPose, scale: float, x: float, y: float) -> tuple[float, float]:
    """Map world meters to a (fractional) patch pixel coordinate."""
    if not scale > 0.0:
        raise ArgumentError(f"scale must be > 0, got {scale}")
    dx = x - pose.x
    dy = y - pose.y
    ch = math.cos(pose.heading)
    sh = math.sin(pose.heading)
    u = (ch * dx + sh * dy) * scale
    v = (-sh * dx + ch * dy) * scale
    return (u, v)


def belief_at(bm: BeliefMap, p: PixelCoord | tuple[float, float]) -> SimplexVec:
    """Return the stored distribution at the nearest integer pixel.

    The belief map is indexed discretely; no interpolation is performed
    (interpolated simplexes would need renormalization).
    """
    if isinstance(p, PixelCoord):
        u, v = float(p.u), float(p.v)
    else:
        u, v = float(p[0]), float(p[1])
    ui = int(round(u))
    vi = int(round(v))
    if not (0 <= ui < bm.height and 0 <= vi < bm.width):
        raise ArgumentError(
            f"belief coordinate ({u}, {v}) outside map bounds {bm.height}x{bm.width}"
        )
    return SimplexVec(bm.values[ui, vi])
