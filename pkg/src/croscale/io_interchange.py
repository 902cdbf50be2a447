"""Binary interchange formats, dataset directory layout, and config parsing.

All formats are little-endian, carry a magic plus a format version, and store
bulk float payloads as IEEE-754 32-bit (in-memory numerics stay 64-bit).
Headers are padded to 16-byte multiples; a belief-map file is therefore
exactly 32 + 4*H*W*C bytes. Readers reject higher versions and report the
byte offset of truncations.

Dataset layout::

    <dir>/manifest.csv            tuple,split
    <dir>/tuple_0000/map.csrr
    <dir>/tuple_0000/obs_00.csrr ...
    <dir>/tuple_0000/coords.csv   obs_index,u,v

Config files are flat ``key = value`` text; '#' starts a comment.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .core_types import BeliefMap, PixelCoord, Raster, SimplexVec, WorldPose
from .encoders import MapEncoderParams, ObsEncoderParams, TrainConfig
from .errors import ArgumentError, FormatError
from .particle_filter import FilterConfig, OdometryNoise, TrajectorySpec
from .sampler import AugmentConfig, DataTuple, SampleConfig
from .synth_world import WorldSpec

FORMAT_VERSION = 1

MAGIC_RASTER = b"CSRR"
MAGIC_BELIEF = b"CSBM"
MAGIC_REPSET = b"CSRV"
MAGIC_PARAMS = b"CSPR"

PARAMS_KIND_MAP = 0
PARAMS_KIND_OBS = 1


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(
            f"truncated {what}: needed {n} bytes at offset {fh.tell() - len(data)}, "
            f"got {len(data)}"
        )
    return data


def _check_magic(fh, expected: bytes):
    got = _read_exact(fh, 4, "magic")
    if got != expected:
        raise FormatError(f"bad magic: expected {expected!r}, got {got!r}")


def _check_version(fh):
    (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
    if version > FORMAT_VERSION:
        raise FormatError(
            f"unsupported format version {version} (reader supports <= {FORMAT_VERSION})"
        )
    return version


def _read_f32_payload(fh, count: int, what: str) -> np.ndarray:
    raw = _read_exact(fh, 4 * count, what)
    arr = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(np.frombuffer(raw, dtype="<f4")))[0])
        raise FormatError(f"non-finite float in {what} at element {bad}")
    return arr


# ---------------------------------------------------------------- rasters

def write_raster(path: str | os.PathLike, raster: Raster) -> None:
    header = struct.pack(
        "<4sIIIIfddd",
        MAGIC_RASTER, FORMAT_VERSION,
        raster.height, raster.width, raster.channels,
        float(raster.scale),
        raster.geo_pose.x, raster.geo_pose.y, raster.geo_pose.heading,
    )
    payload = raster.values.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_raster(path: str | os.PathLike) -> Raster:
    with open(path, "rb") as fh:
        _check_magic(fh, MAGIC_RASTER)
        _check_version(fh)
        h, w, c = struct.unpack("<III", _read_exact(fh, 12, "raster dims"))
        (scale,) = struct.unpack("<f", _read_exact(fh, 4, "raster scale"))
        x, y, heading = struct.unpack("<ddd", _read_exact(fh, 24, "raster pose"))
        vals = _read_f32_payload(fh, h * w * c, "raster payload")
        extra = fh.read(1)
        if extra:
            raise FormatError(f"trailing bytes after raster payload at offset {fh.tell() - 1}")
    return Raster(vals.reshape(h, w, c), scale=scale, geo_pose=WorldPose(x, y, heading))


# ------------------------------------------------------------ belief maps

BELIEF_HEADER_BYTES = 32
BELIEF_SUM_TOL = 1e-5


def write_belief(path: str | os.PathLike, bm: BeliefMap) -> None:
    header = struct.pack(
        "<4sIIII", MAGIC_BELIEF, FORMAT_VERSION, bm.height, bm.width, bm.channels
    )
    header += b"\x00" * (BELIEF_HEADER_BYTES - len(header))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(bm.values.astype("<f4").tobytes())


def read_belief(path: str | os.PathLike) -> BeliefMap:
    with open(path, "rb") as fh:
        _check_magic(fh, MAGIC_BELIEF)
        _check_version(fh)
        h, w, c = struct.unpack("<III", _read_exact(fh, 12, "belief dims"))
        _read_exact(fh, BELIEF_HEADER_BYTES - 20, "belief header padding")
        vals = _read_f32_payload(fh, h * w * c, "belief payload").reshape(h, w, c)
        extra = fh.read(1)
        if extra:
            raise FormatError(f"trailing bytes after belief payload at offset {fh.tell() - 1}")
    if np.any(vals < 0.0):
        raise FormatError("belief payload has negative entries")
    sums = vals.sum(axis=2)
    worst = float(np.abs(sums - 1.0).max())
    if worst > BELIEF_SUM_TOL:
        raise FormatError(
            f"belief pixels must sum to 1 within {BELIEF_SUM_TOL}, worst deviation {worst}"
        )
    if worst > 1e-9:   # restore the in-memory invariant; no-op for clean payloads
        vals = vals / sums[:, :, np.newaxis]
    return BeliefMap(vals)


# ---------------------------------------------------------------- rep sets

def write_repset(path: str | os.PathLike,
                 reps: list[tuple[PixelCoord, SimplexVec]]) -> None:
    if not reps:
        raise ArgumentError("repset must contain at least one record")
    c = len(reps[0][1])
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", MAGIC_REPSET, FORMAT_VERSION, len(reps), c))
        for p, vec in reps:
            if len(vec) != c:
                raise ArgumentError("all repset records must share one length")
            fh.write(struct.pack("<II", p.u, p.v))
            fh.write(vec.probs.astype("<f4").tobytes())


def read_repset(path: str | os.PathLike) -> list[tuple[PixelCoord, SimplexVec]]:
    out = []
    with open(path, "rb") as fh:
        _check_magic(fh, MAGIC_REPSET)
        _check_version(fh)
        count, c = struct.unpack("<II", _read_exact(fh, 8, "repset counts"))
        for i in range(count):
            u, v = struct.unpack("<II", _read_exact(fh, 8, f"repset record {i} coords"))
            vec = _read_f32_payload(fh, c, f"repset record {i}")
            s = vec.sum()
            if abs(s - 1.0) > BELIEF_SUM_TOL:
                raise FormatError(
                    f"repset record {i} must sum to 1 within {BELIEF_SUM_TOL}, got {s}"
                )
            if abs(s - 1.0) > 1e-9:
                vec = vec / s
            out.append((PixelCoord(u, v), SimplexVec(vec)))
        extra = fh.read(1)
        if extra:
            raise FormatError(f"trailing bytes after repset payload at offset {fh.tell() - 1}")
    return out


# ------------------------------------------------------------- parameters

def write_params(path: str | os.PathLike,
                 params: MapEncoderParams | ObsEncoderParams) -> None:
    with open(path, "wb") as fh:
        if isinstance(params, MapEncoderParams):
            kind = PARAMS_KIND_MAP
            dims = (params.kernel_size, params.in_channels, params.out_channels)
            blocks = (params.weights, params.bias)
        else:
            kind = PARAMS_KIND_OBS
            dims = (params.n_bins, params.in_channels, params.out_channels)
            blocks = (params.bin_edges, params.weights, params.bias)
        fh.write(struct.pack("<4sII", MAGIC_PARAMS, FORMAT_VERSION, kind))
        fh.write(struct.pack("<III", *dims))
        fh.write(b"\x00" * 4)
        for block in blocks:
            fh.write(np.asarray(block, dtype="<f8").tobytes())


def read_params(path: str | os.PathLike) -> MapEncoderParams | ObsEncoderParams:
    with open(path, "rb") as fh:
        _check_magic(fh, MAGIC_PARAMS)
        _check_version(fh)
        (kind,) = struct.unpack("<I", _read_exact(fh, 4, "params kind"))
        a, d, c = struct.unpack("<III", _read_exact(fh, 12, "params dims"))
        _read_exact(fh, 4, "params padding")

        def read_f64(count: int, what: str) -> np.ndarray:
            raw = _read_exact(fh, 8 * count, what)
            arr = np.frombuffer(raw, dtype="<f8").copy()
            if not np.all(np.isfinite(arr)):
                raise FormatError(f"non-finite value in {what}")
            return arr

        if kind == PARAMS_KIND_MAP:
            w = read_f64(c * a * a * d, "map weights").reshape(c, a * a * d)
            b = read_f64(c, "map bias")
            result = MapEncoderParams(a, w, b)
        elif kind == PARAMS_KIND_OBS:
            edges = read_f64(d * (a + 1), "bin edges").reshape(d, a + 1)
            w = read_f64(c * d * (1 + a), "obs weights").reshape(c, d * (1 + a))
            b = read_f64(c, "obs bias")
            result = ObsEncoderParams(edges, w, b)
        else:
            raise FormatError(f"unknown params kind {kind}")
        extra = fh.read(1)
        if extra:
            raise FormatError(f"trailing bytes after params payload at offset {fh.tell() - 1}")
    return result


# ------------------------------------------------------------ dataset dirs

def tuple_dirname(index: int) -> str:
    return f"tuple_{index:04d}"


def write_tuple(dirpath: str | os.PathLike, dt: DataTuple) -> None:
    os.makedirs(dirpath, exist_ok=True)
    write_raster(os.path.join(dirpath, "map.csrr"), dt.map_patch)
    for j, obs in enumerate(dt.observations):
        write_raster(os.path.join(dirpath, f"obs_{j:02d}.csrr"), obs)
    with open(os.path.join(dirpath, "coords.csv"), "w") as fh:
        fh.write("obs_index,u,v\n")
        for j, p in enumerate(dt.coords):
            fh.write(f"{j},{p.u},{p.v}\n")


def read_tuple(dirpath: str | os.PathLike) -> DataTuple:
    name = os.path.basename(os.path.normpath(dirpath))
    map_path = os.path.join(dirpath, "map.csrr")
    coords_path = os.path.join(dirpath, "coords.csv")
    for path in (map_path, coords_path):
        if not os.path.exists(path):
            raise FormatError(f"dataset tuple {name}: missing {os.path.basename(path)}")
    patch = read_raster(map_path)
    coords = []
    obs = []
    with open(coords_path) as fh:
        header = fh.readline()
        if header.strip() != "obs_index,u,v":
            raise FormatError(f"dataset tuple {name}: bad coords.csv header")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                j_s, u_s, v_s = line.split(",")
                j, u, v = int(j_s), int(u_s), int(v_s)
            except ValueError as exc:
                raise FormatError(f"dataset tuple {name}: bad coords row {line!r}") from exc
            if not (0 <= u < patch.height and 0 <= v < patch.width):
                raise FormatError(
                    f"dataset tuple {name}: coordinate ({u}, {v}) outside map patch"
                )
            obs_path = os.path.join(dirpath, f"obs_{j:02d}.csrr")
            if not os.path.exists(obs_path):
                raise FormatError(f"dataset tuple {name}: missing obs_{j:02d}.csrr")
            coords.append(PixelCoord(u, v))
            obs.append(read_raster(obs_path))
    if not coords:
        raise FormatError(f"dataset tuple {name}: no observations listed")
    return DataTuple(map_patch=patch, observations=tuple(obs),
                     coords=tuple(coords), patch_pose=patch.geo_pose)


def write_manifest(dirpath: str | os.PathLike, rows: list[tuple[str, str]]) -> None:
    with open(os.path.join(dirpath, "manifest.csv"), "w") as fh:
        fh.write("tuple,split\n")
        for name, split in rows:
            fh.write(f"{name},{split}\n")


class DatasetReader:
    """Lazy dataset provider over the directory layout.

    Supports __len__/__getitem__ so it can feed the trainer directly without
    materializing every tuple; an optional split restricts the view.
    """

    def __init__(self, dirpath: str | os.PathLike, split: str | None = None):
        self.dirpath = str(dirpath)
        manifest = os.path.join(self.dirpath, "manifest.csv")
        if not os.path.exists(manifest):
            raise FormatError(f"dataset {self.dirpath}: missing manifest.csv")
        self.rows: list[tuple[str, str]] = []
        with open(manifest) as fh:
            header = fh.readline()
            if header.strip() != "tuple,split":
                raise FormatError(f"dataset {self.dirpath}: bad manifest header")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 2:
                    raise FormatError(f"dataset {self.dirpath}: bad manifest row {line!r}")
                self.rows.append((parts[0], parts[1]))
        if split is not None:
            self.rows = [r for r in self.rows if r[1] == split]

    def __len__(self) -> int:
        return len(self.rows)

    def __getitem__(self, i: int) -> DataTuple:
        name = self.rows[i][0]
        return read_tuple(os.path.join(self.dirpath, name))

    def splits(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for _, split in self.rows:
            out[split] = out.get(split, 0) + 1
        return out


def write_dataset(dirpath: str | os.PathLike, tuples, splits=None) -> None:
    """Write tuples plus a manifest; splits defaults to all-'train'."""
    os.makedirs(dirpath, exist_ok=True)
    rows = []
    for i, dt in enumerate(tuples):
        name = tuple_dirname(i)
        write_tuple(os.path.join(dirpath, name), dt)
        split = "train" if splits is None else splits[i]
        rows.append((name, split))
    write_manifest(dirpath, rows)


# -------------------------------------------------------------- config kv

def parse_config(path: str | os.PathLike) -> dict[str, str]:
    """Flat key=value config; '#' comments and blank lines are skipped."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value, got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _get(cfg: dict, key: str, cast, default):
    if key not in cfg:
        return default
    try:
        if cast is bool:
            return cfg[key].lower() in ("1", "true", "yes", "on")
        return cast(cfg[key])
    except ValueError as exc:
        raise ArgumentError(f"config key {key}={cfg[key]!r}: {exc}") from exc


def world_spec_from_config(cfg: dict, seed: int | None = None) -> WorldSpec:
    defaults = WorldSpec()
    return WorldSpec(
        seed=seed if seed is not None else _get(cfg, "seed", int, defaults.seed),
        world_size=_get(cfg, "world_size", float, defaults.world_size),
        num_terrains=_get(cfg, "num_terrains", int, defaults.num_terrains),
        map_scale=_get(cfg, "map_scale", float, defaults.map_scale),
        obs_scale=_get(cfg, "obs_scale", float, defaults.obs_scale),
        map_channels=_get(cfg, "map_channels", int, defaults.map_channels),
        obs_channels=_get(cfg, "obs_channels", int, defaults.obs_channels),
        noise_sigma_map=_get(cfg, "noise_sigma_map", float, defaults.noise_sigma_map),
        noise_sigma_obs=_get(cfg, "noise_sigma_obs", float, defaults.noise_sigma_obs),
        blur_radius_map=_get(cfg, "blur_radius_map", int, defaults.blur_radius_map),
        texture_period_obs=_get(cfg, "texture_period_obs", float, defaults.texture_period_obs),
        texture_amp_obs=_get(cfg, "texture_amp_obs", float, defaults.texture_amp_obs),
        n_blobs=_get(cfg, "n_blobs", int, defaults.n_blobs),
        blob_sigma_min=_get(cfg, "blob_sigma_min", float, defaults.blob_sigma_min),
        blob_sigma_max=_get(cfg, "blob_sigma_max", float, defaults.blob_sigma_max),
    )


def sample_config_from_config(cfg: dict, seed: int | None = None) -> SampleConfig:
    defaults = SampleConfig()
    return SampleConfig(
        patch_size=_get(cfg, "patch_size", int, defaults.patch_size),
        obs_size=_get(cfg, "obs_size", int, defaults.obs_size),
        n_obs=_get(cfg, "n_obs", int, defaults.n_obs),
        margin=_get(cfg, "margin", int, defaults.margin),
        seed=seed if seed is not None else _get(cfg, "seed", int, defaults.seed),
    )


def augment_config_from_config(cfg: dict) -> AugmentConfig:
    defaults = AugmentConfig()

    def interval(key, dflt):
        lo = _get(cfg, f"{key}_lo", float, dflt[0])
        hi = _get(cfg, f"{key}_hi", float, dflt[1])
        return (lo, hi)

    return AugmentConfig(
        enable_c4=_get(cfg, "enable_c4", bool, defaults.enable_c4),
        brightness_range=interval("brightness", defaults.brightness_range),
        contrast_range=interval("contrast", defaults.contrast_range),
        saturation_range=interval("saturation", defaults.saturation_range),
        hue_range=interval("hue", defaults.hue_range),
    )


def train_config_from_config(cfg: dict, seed: int | None = None) -> TrainConfig:
    defaults = TrainConfig()
    return TrainConfig(
        C=_get(cfg, "C", int, defaults.C),
        tau=_get(cfg, "tau", float, defaults.tau),
        lr=_get(cfg, "lr", float, defaults.lr),
        momentum=_get(cfg, "momentum", float, defaults.momentum),
        plateau_factor=_get(cfg, "plateau_factor", float, defaults.plateau_factor),
        plateau_patience=_get(cfg, "plateau_patience", int, defaults.plateau_patience),
        epochs=_get(cfg, "epochs", int, defaults.epochs),
        b=_get(cfg, "b", int, defaults.b),
        n=_get(cfg, "n", int, defaults.n),
        seed=seed if seed is not None else _get(cfg, "seed", int, defaults.seed),
        kernel_size=_get(cfg, "kernel_size", int, defaults.kernel_size),
        n_bins=_get(cfg, "n_bins", int, defaults.n_bins),
    )


def trajectory_spec_from_config(cfg: dict, seed: int | None = None) -> TrajectorySpec:
    required = ("start_x", "start_y", "end_x", "end_y")
    for key in required:
        if key not in cfg:
            raise ArgumentError(f"trajectory config missing key {key}")
    start = WorldPose(float(cfg["start_x"]), float(cfg["start_y"]), 0.0)
    end = WorldPose(float(cfg["end_x"]), float(cfg["end_y"]), 0.0)
    noise = OdometryNoise(
        sigma_trans=_get(cfg, "sigma_trans", float, 0.0),
        sigma_rot=_get(cfg, "sigma_rot", float, 0.0),
    )
    return TrajectorySpec(
        start=start, end=end,
        steps=_get(cfg, "steps", int, 40),
        n_sequences=_get(cfg, "n_sequences", int, 100),
        noise=noise,
        seed=seed if seed is not None else _get(cfg, "seed", int, 0),
    )


def filter_config_from_config(cfg: dict) -> FilterConfig:
    defaults = FilterConfig()
    noise = OdometryNoise(
        sigma_trans=_get(cfg, "sigma_trans", float, 0.0),
        sigma_rot=_get(cfg, "sigma_rot", float, 0.0),
    )
    return FilterConfig(
        n_particles=_get(cfg, "n_particles", int, defaults.n_particles),
        ess_threshold=_get(cfg, "ess_threshold", float, defaults.ess_threshold),
        likelihood_floor=_get(cfg, "likelihood_floor", float, defaults.likelihood_floor),
        weight_mode=_get(cfg, "weight_mode", str, defaults.weight_mode),
        theta=_get(cfg, "theta", float, defaults.theta),
        process_noise=noise,
    )
