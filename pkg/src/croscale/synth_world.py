"""Synthetic multi-modal world generator.

A latent terrain-class field is rendered into two co-registered rasters: a
small-scale, blurred "map" modality and a large-scale, textured "observation"
modality. The two modalities use different channel counts and independent
per-class signatures, so no linear channel mapping exists between them and a
cross-modal representation has to be learned.

Pipeline: sum of seeded Gaussian bumps -> smooth scalar field at map
resolution -> bilinear upsample to observation resolution -> quantile
quantization into K classes -> per-modality rendering (class signatures +
seeded Gaussian noise; map additionally box-blurred, observations carry a
periodic texture in world coordinates).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core_types import Raster, WorldPose
from .errors import ArgumentError


@dataclass(frozen=True)
class WorldSpec:
    """Configuration of the synthetic world generator."""

    seed: int = 0
    world_size: float = 1024.0          # square side, meters
    num_terrains: int = 4               # K >= 2
    map_scale: float = 1.0              # pixel/m
    obs_scale: float = 8.0              # pixel/m, >= 2x map_scale
    map_channels: int = 3
    obs_channels: int = 2
    noise_sigma_map: float = 0.05
    noise_sigma_obs: float = 0.05
    blur_radius_map: int = 14           # box blur radius, map pixels
    texture_period_obs: float = 24.0    # obs pixels
    texture_amp_obs: float = 0.1
    n_blobs: int = 0                    # 0 -> auto from area and blob size
    blob_sigma_min: float = 10.0        # meters
    blob_sigma_max: float = 35.0

    def __post_init__(self):
        if self.num_terrains < 2:
            raise ArgumentError(f"num_terrains must be >= 2, got {self.num_terrains}")
        if self.map_scale <= 0 or self.obs_scale <= 0:
            raise ArgumentError("scales must be > 0")
        if self.obs_scale / self.map_scale < 2.0:
            raise ArgumentError(
                "obs_scale / map_scale must be >= 2 (cross-scale by construction), "
                f"got {self.obs_scale / self.map_scale}"
            )
        if self.world_size <= 0:
            raise ArgumentError("world_size must be > 0")
        if self.map_channels < 1 or self.obs_channels < 1:
            raise ArgumentError("channel counts must be >= 1")


@dataclass(frozen=True)
class World:
    """Generated world: terrain class grid plus both rendered modalities.

    ``terrain`` is a uint8 grid at observation resolution with entries in
    [0, K). ``signatures_map`` / ``signatures_obs`` are the (K, D) per-class
    channel signatures each modality renders.
    """

    terrain: np.ndarray
    map_raster: Raster
    obs_raster: Raster
    signatures_map: np.ndarray
    signatures_obs: np.ndarray

    @property
    def num_terrains(self) -> int:
        return self.signatures_map.shape[0]


MIN_CLASS_FRACTION = 0.01
_MAX_FIELD_RETRIES = 16


def _bump_field(shape: tuple[int, int], scale: float, n_blobs: int,
                sigma_range: tuple[float, float], rng: np.random.Generator) -> np.ndarray:
    """Smooth scalar field: sum of Gaussian bumps with random centers/widths.

    Each bump is only evaluated inside its +-3 sigma window, so cost stays
    linear in blob area rather than grid area.
    """
    h, w = shape
    field = np.zeros((h, w), dtype=np.float64)
    centers = rng.uniform(0.0, [h, w], size=(n_blobs, 2))
    sigmas_px = rng.uniform(sigma_range[0], sigma_range[1], size=n_blobs) * scale
    amps = rng.uniform(-1.0, 1.0, size=n_blobs)
    for (cy, cx), s, a in zip(centers, sigmas_px, amps):
        r = int(math.ceil(3.0 * s))
        y0, y1 = max(0, int(cy) - r), min(h, int(cy) + r + 1)
        x0, x1 = max(0, int(cx) - r), min(w, int(cx) + r + 1)
        if y0 >= y1 or x0 >= x1:
            continue
        yy = np.arange(y0, y1, dtype=np.float64) - cy
        xx = np.arange(x0, x1, dtype=np.float64) - cx
        g = np.exp(-(yy[:, None] ** 2 + xx[None, :] ** 2) / (2.0 * s * s))
        field[y0:y1, x0:x1] += a * g
    return field


def _upsample_bilinear(field: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a 2D field onto out_shape, aligned at grid corners."""
    h, w = field.shape
    oh, ow = out_shape
    rows = np.linspace(0.0, h - 1.0, oh)
    cols = np.linspace(0.0, w - 1.0, ow)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    np.clip(r0, 0, max(h - 2, 0), out=r0)
    np.clip(c0, 0, max(w - 2, 0), out=c0)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    top = field[r0][:, c0] * (1 - fc) + field[r0][:, c1] * fc
    bot = field[r1][:, c0] * (1 - fc) + field[r1][:, c1] * fc
    return top * (1 - fr) + bot * fr


def _quantize_by_quantiles(field: np.ndarray, k: int) -> np.ndarray:
    """Quantize a scalar field into k classes by its own quantiles."""
    thresholds = np.quantile(field, np.arange(1, k) / k)
    return np.digitize(field, thresholds).astype(np.uint8)


def generate_world(spec: WorldSpec) -> World:
    """Generate a deterministic synthetic world from a spec.

    The terrain field is regenerated with a fresh sub-seed until every class
    occupies at least 1% of the pixels (quantile quantization makes this the
    overwhelmingly common case on the first draw).
    """
    map_h = int(round(spec.world_size * spec.map_scale))
    map_w = map_h
    obs_h = int(round(spec.world_size * spec.obs_scale))
    obs_w = obs_h
    if map_h < 1 or obs_h < 1:
        raise ArgumentError("world has zero pixel area under the given scales")

    k = spec.num_terrains
    seed_seq = np.random.SeedSequence(spec.seed)
    sig_rng = np.random.Generator(np.random.PCG64(seed_seq.spawn(1)[0]))
    signatures_map = sig_rng.uniform(0.1, 0.9, size=(k, spec.map_channels))
    signatures_obs = sig_rng.uniform(0.1, 0.9, size=(k, spec.obs_channels))

    n_blobs = spec.n_blobs
    if n_blobs <= 0:
        # dense enough that blob footprints overlap ~2.6x: terrain features
        # stay fine relative to an observation footprint
        sigma_mid = 0.5 * (spec.blob_sigma_min + spec.blob_sigma_max)
        n_blobs = max(16, int(round(
            2.6 * spec.world_size * spec.world_size / (math.pi * sigma_mid ** 2)
        )))

    terrain_obs = None
    terrain_map = None
    for attempt in range(_MAX_FIELD_RETRIES):
        field_rng = np.random.Generator(np.random.PCG64(seed_seq.spawn(1)[0]))
        field = _bump_field((map_h, map_w), spec.map_scale, n_blobs,
                            (spec.blob_sigma_min, spec.blob_sigma_max), field_rng)
        field_obs = _upsample_bilinear(field, (obs_h, obs_w))
        cand_obs = _quantize_by_quantiles(field_obs, k)
        counts = np.bincount(cand_obs.ravel(), minlength=k)
        if counts.min() >= MIN_CLASS_FRACTION * cand_obs.size:
            thresholds = np.quantile(field_obs, np.arange(1, k) / k)
            terrain_obs = cand_obs
            terrain_map = np.digitize(field, thresholds).astype(np.uint8)
            break
    if terrain_obs is None:
        raise ArgumentError(
            f"could not generate {k} terrain classes each covering >= 1% of pixels"
        )

    render_rng = np.random.Generator(np.random.PCG64(seed_seq.spawn(1)[0]))

    map_values = signatures_map[terrain_map].astype(np.float64)
    if spec.noise_sigma_map > 0:
        map_values += render_rng.normal(0.0, spec.noise_sigma_map, size=map_values.shape)
    if spec.blur_radius_map > 0:
        size = 2 * int(spec.blur_radius_map) + 1
        for d in range(spec.map_channels):
            map_values[:, :, d] = ndimage.uniform_filter(
                map_values[:, :, d], size=size, mode="nearest"
            )

    obs_values = signatures_obs[terrain_obs].astype(np.float64)
    if spec.noise_sigma_obs > 0:
        obs_values += render_rng.normal(0.0, spec.noise_sigma_obs, size=obs_values.shape)
    if spec.texture_amp_obs > 0 and spec.texture_period_obs > 0:
        obs_values += texture_field(obs_h, obs_w, spec)[:, :, None]

    origin = WorldPose(0.0, 0.0, 0.0)
    return World(
        terrain=terrain_obs,
        map_raster=Raster(map_values, scale=spec.map_scale, geo_pose=origin),
        obs_raster=Raster(obs_values, scale=spec.obs_scale, geo_pose=origin),
        signatures_map=signatures_map,
        signatures_obs=signatures_obs,
    )


def texture_field(h: int, w: int, spec: WorldSpec) -> np.ndarray:
    """Deterministic periodic texture added to every observation channel."""
    uu = np.arange(h, dtype=np.float64)[:, None]
    vv = np.arange(w, dtype=np.float64)[None, :]
    ang = 2.0 * math.pi / spec.texture_period_obs
    return spec.texture_amp_obs * np.sin(ang * uu) * np.sin(ang * vv)
