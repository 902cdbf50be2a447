"""Data-tuple sampling and the stochastic view-augmentation family.

A data tuple is (M, O, P): one map patch, n observation crops, and the pixel
coordinates of those observations inside the patch. Patches are cut from the
map source at a uniformly random in-bounds center with a uniformly random
rotation in [0, 2pi); observation crops are axis-aligned in the world frame,
rotation invariance being left to the C4 view augmentation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_types import (
    PixelCoord,
    Raster,
    WorldPose,
    bilinear_sample_many,
    patch_to_world,
    world_to_patch,
)
from .errors import ArgumentError

_MAX_CENTER_DRAWS = 1000


@dataclass(frozen=True)
class SampleConfig:
    """Geometry of one data tuple."""

    patch_size: int = 512
    obs_size: int = 224
    n_obs: int = 6
    margin: int = 0      # 0 -> auto: smallest safe keep-in border
    seed: int = 0

    def __post_init__(self):
        if self.patch_size < 8 or self.obs_size < 8:
            raise ArgumentError("patch_size and obs_size must be >= 8")
        if self.n_obs < 1:
            raise ArgumentError("n_obs must be >= 1")


@dataclass(frozen=True)
class AugmentConfig:
    """Stochastic augmentation family for observation views.

    Brightness/contrast are multiplier intervals and must stay positive.
    Saturation/hue only apply to 3-channel views; hue_range is a shift in
    [0, 1) hue units. value_range, when set, clamps jittered values back to
    the source range.
    """

    enable_c4: bool = True
    brightness_range: tuple[float, float] = (0.8, 1.2)
    contrast_range: tuple[float, float] = (0.8, 1.2)
    saturation_range: tuple[float, float] = (0.8, 1.2)
    hue_range: tuple[float, float] = (-0.05, 0.05)
    value_range: tuple[float, float] | None = None

    def __post_init__(self):
        for name in ("brightness_range", "contrast_range", "saturation_range"):
            lo, hi = getattr(self, name)
            if lo <= 0 or hi < lo:
                raise ArgumentError(f"{name} must be a positive interval, got ({lo}, {hi})")
        lo, hi = self.hue_range
        if hi < lo:
            raise ArgumentError("hue_range must be a valid interval")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        """Config under which augment() is the identity map."""
        return cls(enable_c4=False, brightness_range=(1.0, 1.0),
                   contrast_range=(1.0, 1.0), saturation_range=(1.0, 1.0),
                   hue_range=(0.0, 0.0), value_range=None)

    def is_channelwise_affine(self, channels: int) -> bool:
        """True when the photometric family reduces to per-channel affine maps."""
        if channels != 3:
            return True
        return (self.saturation_range == (1.0, 1.0)
                and self.hue_range == (0.0, 0.0))


@dataclass(frozen=True)
class DataTuple:
    """One (M, O, P) sample: map patch, observations, pixel coordinates."""

    map_patch: Raster
    observations: tuple[Raster, ...]
    coords: tuple[PixelCoord, ...]
    patch_pose: WorldPose

    def __post_init__(self):
        if len(self.observations) != len(self.coords) or len(self.observations) < 1:
            raise ArgumentError("|O| must equal |P| and be >= 1")
        h, w = self.map_patch.height, self.map_patch.width
        for p in self.coords:
            if not (0 <= p.u < h and 0 <= p.v < w):
                raise ArgumentError(f"coordinate {p} outside map patch {h}x{w}")
        object.__setattr__(self, "observations", tuple(self.observations))
        object.__setattr__(self, "coords", tuple(self.coords))

    @property
    def n_obs(self) -> int:
        return len(self.observations)


def min_margin(cfg: SampleConfig, map_scale: float, obs_scale: float) -> int:
    """Smallest keep-in border (map pixels) that keeps every observation's
    world footprint inside the rotated patch: half the crop diagonal."""
    half_w = 0.5 * (cfg.obs_size - 1) / obs_scale * map_scale
    return int(math.ceil(half_w * math.sqrt(2.0))) + 1


def _raster_extent_ok(r: Raster, xs: np.ndarray, ys: np.ndarray) -> bool:
    u, v = world_to_patch_many(r.geo_pose, r.scale, xs, ys)
    return bool(
        (u >= 0).all() and (u <= r.height - 1).all()
        and (v >= 0).all() and (v <= r.width - 1).all()
    )


def world_to_patch_many(pose: WorldPose, scale: float, xs: np.ndarray, ys: np.ndarray):
    """Vectorized world_to_patch over coordinate arrays."""
    ch = math.cos(pose.heading)
    sh = math.sin(pose.heading)
    dx = xs - pose.x
    dy = ys - pose.y
    return (ch * dx + sh * dy) * scale, (-sh * dx + ch * dy) * scale


def extract_patch(src: Raster, pose: WorldPose, scale: float,
                  height: int, width: int) -> Raster:
    """Extract a (possibly rotated) patch by inverse-mapped bilinear sampling.

    ``pose`` is the world pose of the patch's pixel (0, 0); ``scale`` the
    patch's pixel/m. Raises if any sample falls outside the source.
    """
    uu = np.arange(height, dtype=np.float64)
    vv = np.arange(width, dtype=np.float64)
    ug, vg = np.meshgrid(uu, vv, indexing="ij")
    ch = math.cos(pose.heading)
    sh = math.sin(pose.heading)
    xs = (ch * ug - sh * vg) / scale + pose.x
    ys = (sh * ug + ch * vg) / scale + pose.y
    su, sv = world_to_patch_many(src.geo_pose, src.scale, xs, ys)
    values = bilinear_sample_many(src, su, sv)
    return Raster(values, scale=scale, geo_pose=pose)


def sample_tuple(map_src: Raster, obs_src: Raster, cfg: SampleConfig,
                 rng: np.random.Generator) -> DataTuple:
    """Sample one data tuple from a map source and an observation source.

    Draws a uniformly random in-bounds patch center and rotation (rejection
    sampling over the source rectangle), extracts the patch, draws n_obs
    coordinates uniformly inside the margin interior, converts them to world
    coordinates and cuts axis-aligned observation crops around them.
    """
    margin = cfg.margin
    if margin <= 0:
        margin = min_margin(cfg, map_src.scale, obs_src.scale)
    if 2 * margin >= cfg.patch_size:
        raise ArgumentError(
            f"margin {margin} leaves no interior in a {cfg.patch_size}px patch"
        )
    need = min_margin(cfg, map_src.scale, obs_src.scale)
    if margin < need:
        raise ArgumentError(
            f"margin {margin} smaller than the observation footprint reach {need}"
        )

    half = 0.5 * (cfg.patch_size - 1)
    corners_patch = np.array(
        [[0.0, 0.0], [0.0, cfg.patch_size - 1.0],
         [cfg.patch_size - 1.0, 0.0], [cfg.patch_size - 1.0, cfg.patch_size - 1.0]]
    )

    pose = None
    for _ in range(_MAX_CENTER_DRAWS):
        cu = rng.uniform(0.0, map_src.height - 1.0)
        cv = rng.uniform(0.0, map_src.width - 1.0)
        heading = rng.uniform(0.0, 2.0 * math.pi)
        cx, cy = patch_to_world(map_src.geo_pose, map_src.scale, cu, cv)
        ch = math.cos(heading)
        sh = math.sin(heading)
        ox = cx - (ch * half - sh * half) / map_src.scale
        oy = cy - (sh * half + ch * half) / map_src.scale
        cand = WorldPose(ox, oy, heading)
        cch = math.cos(cand.heading)
        csh = math.sin(cand.heading)
        xs = (cch * corners_patch[:, 0] - csh * corners_patch[:, 1]) / map_src.scale + cand.x
        ys = (csh * corners_patch[:, 0] + cch * corners_patch[:, 1]) / map_src.scale + cand.y
        if _raster_extent_ok(map_src, xs, ys) and _raster_extent_ok(obs_src, xs, ys):
            pose = cand
            break
    if pose is None:
        raise ArgumentError(
            "sources too small: no in-bounds placement found for "
            f"a rotated {cfg.patch_size}px patch"
        )

    map_patch = extract_patch(map_src, pose, map_src.scale,
                              cfg.patch_size, cfg.patch_size)

    lo = margin
    hi = cfg.patch_size - margin  # exclusive
    coords = [
        PixelCoord(int(u), int(v))
        for u, v in zip(rng.integers(lo, hi, size=cfg.n_obs),
                        rng.integers(lo, hi, size=cfg.n_obs))
    ]

    observations = [extract_obs(obs_src, pose, map_src.scale, p, cfg.obs_size)
                    for p in coords]
    return DataTuple(map_patch=map_patch, observations=tuple(observations),
                     coords=tuple(coords), patch_pose=pose)


def extract_obs(obs_src: Raster, patch_pose: WorldPose, patch_scale: float,
                p: PixelCoord, obs_size: int) -> Raster:
    """Cut the axis-aligned observation crop centered at patch coordinate p.

    Pure function of its inputs: re-extracting at the same coordinate
    reproduces the crop bit-exactly.
    """
    cx, cy = patch_to_world(patch_pose, patch_scale, float(p.u), float(p.v))
    half_m = 0.5 * (obs_size - 1) / obs_src.scale
    origin = WorldPose(cx - half_m, cy - half_m, 0.0)
    return extract_patch(obs_src, origin, obs_src.scale, obs_size, obs_size)


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    v = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    d = v - mn
    s = np.where(v > 0, d / np.where(v > 0, v, 1.0), 0.0)
    h = np.zeros_like(v)
    mask = d > 0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    dd = np.where(mask, d, 1.0)
    idx = mask & (v == r)
    h = np.where(idx, ((g - b) / dd) % 6.0, h)
    idx = mask & (v == g) & (v != r)
    h = np.where(idx, (b - r) / dd + 2.0, h)
    idx = mask & (v == b) & (v != r) & (v != g)
    h = np.where(idx, (r - g) / dd + 4.0, h)
    return np.stack([h / 6.0, s, v], axis=-1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0] * 6.0, hsv[..., 1], hsv[..., 2]
    i = np.floor(h).astype(np.int64) % 6
    f = h - np.floor(h)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def draw_augment_params(cfg: AugmentConfig, channels: int,
                        rng: np.random.Generator) -> dict:
    """Draw one set of augmentation parameters. Shared by augment() and the
    trainer's fast feature path so both consume the rng identically."""
    params = {"rot": 0, "brightness": 1.0, "contrast": 1.0,
              "saturation": 1.0, "hue": 0.0}
    if cfg.enable_c4:
        params["rot"] = int(rng.integers(0, 4))
    params["brightness"] = float(rng.uniform(*cfg.brightness_range))
    params["contrast"] = float(rng.uniform(*cfg.contrast_range))
    if channels == 3:
        params["saturation"] = float(rng.uniform(*cfg.saturation_range))
        params["hue"] = float(rng.uniform(*cfg.hue_range))
    return params


def apply_augment(values: np.ndarray, params: dict,
                  value_range: tuple[float, float] | None) -> np.ndarray:
    """Apply drawn augmentation parameters to an (H, W, D) value array."""
    out = values
    if params["rot"]:
        out = np.rot90(out, k=params["rot"], axes=(0, 1))
    out = out * params["brightness"]
    if params["contrast"] != 1.0:
        means = out.mean(axis=(0, 1), keepdims=True)
        out = (out - means) * params["contrast"] + means
    if out.shape[2] == 3 and (params["saturation"] != 1.0 or params["hue"] != 0.0):
        hsv = _rgb_to_hsv(np.maximum(out, 0.0))
        hsv[..., 1] = np.clip(hsv[..., 1] * params["saturation"], 0.0, 1.0)
        hsv[..., 0] = (hsv[..., 0] + params["hue"]) % 1.0
        out = _hsv_to_rgb(hsv)
    if value_range is not None:
        out = np.clip(out, value_range[0], value_range[1])
    return np.ascontiguousarray(out)


def augment(obs: Raster, cfg: AugmentConfig, rng: np.random.Generator) -> Raster:
    """Produce one randomly augmented view of an observation.

    One uniformly drawn C4 rotation followed by photometric jitter;
    saturation/hue only for 3-channel rasters.
    """
    if cfg.enable_c4 and obs.height != obs.width:
        raise ArgumentError("C4 augmentation requires a square observation")
    params = draw_augment_params(cfg, obs.channels, rng)
    out = apply_augment(obs.values, params, cfg.value_range)
    return Raster(out, scale=obs.scale, geo_pose=obs.geo_pose)


def make_minibatch(dataset, b: int, cfg: AugmentConfig,
                   rng: np.random.Generator) -> list[tuple[DataTuple, list[tuple[Raster, Raster]]]]:
    """Sample b tuples without replacement and emit two augmented views per
    observation, with independent draws for every view."""
    n = len(dataset)
    if b > n:
        raise ArgumentError(f"minibatch size {b} exceeds dataset size {n}")
    idx = rng.choice(n, size=b, replace=False)
    batch = []
    for i in idx:
        dt = dataset[int(i)]
        views = [(augment(o, cfg, rng), augment(o, cfg, rng))
                 for o in dt.observations]
        batch.append((dt, views))
    return batch
