"""Desk-scale evaluation protocols: recall over a test set and
particle-filter trajectory correction on selected patches.

These drive the whole pipeline end to end on the synthetic world: sample
lazy datasets, train the encoders, evaluate top-k% recall per test patch,
and run the straight-line noisy-trajectory particle-filter comparison
against dead reckoning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_types import PixelCoord, Raster, WorldPose
from .encoders import MapEncoderParams, ObsEncoderParams, encode_map, encode_obs
from .errors import ArgumentError
from .inference import DirichletModel, likelihood_map, recall_at_k
from .particle_filter import (
    FilterConfig,
    OdometryNoise,
    TrajectorySpec,
    evaluate_filter,
)
from .sampler import DataTuple, SampleConfig, extract_obs, sample_tuple
from .synth_world import World


class LazySampledDataset:
    """Dataset provider that samples tuple i on demand.

    Each index owns a spawned child seed, so tuples are independent and the
    provider is deterministic and random-access without holding more than
    one tuple in memory.
    """

    def __init__(self, map_raster: Raster, obs_raster: Raster,
                 cfg: SampleConfig, n: int, seed: int):
        self._map = map_raster
        self._obs = obs_raster
        self._cfg = cfg
        self._children = np.random.SeedSequence(seed).spawn(n)

    def __len__(self) -> int:
        return len(self._children)

    def __getitem__(self, i: int) -> DataTuple:
        rng = np.random.Generator(np.random.PCG64(self._children[i]))
        return sample_tuple(self._map, self._obs, self._cfg, rng)


@dataclass
class RecallResult:
    per_patch: dict[float, np.ndarray]    # k% -> (n_patches,) recall rates

    def average(self, k: float) -> float:
        return float(self.per_patch[k].mean())


def evaluate_recall(map_params: MapEncoderParams, obs_params: ObsEncoderParams,
                    test_ds, theta: float = 5.0,
                    ks: tuple[float, ...] = (1.0, 5.0),
                    progress=None) -> RecallResult:
    """Per-patch top-k% recall over a test dataset.

    For every tuple: encode the patch once, encode each observation without
    augmentation, build its likelihood heat map, and score the truth pixel.
    """
    model = DirichletModel(theta=theta)
    rates = {k: np.empty(len(test_ds)) for k in ks}
    for i in range(len(test_ds)):
        dt = test_ds[i]
        bm = encode_map(map_params, dt.map_patch)
        hits = {k: 0 for k in ks}
        for p, obs in zip(dt.coords, dt.observations):
            y = encode_obs(obs_params, obs)
            heat = likelihood_map(bm, y, model)
            for k in ks:
                hits[k] += recall_at_k(heat, p, k)
        for k in ks:
            rates[k][i] = hits[k] / dt.n_obs
        if progress is not None:
            progress(i + 1, len(test_ds))
    return RecallResult(rates)


def terrain_composition(world: World, dt: DataTuple, stride: int = 8) -> np.ndarray:
    """Class fractions inside a patch footprint, from the ground-truth mask."""
    patch = dt.map_patch
    us = np.arange(0, patch.height, stride, dtype=np.float64)
    vs = np.arange(0, patch.width, stride, dtype=np.float64)
    ug, vg = np.meshgrid(us, vs, indexing="ij")
    ch = math.cos(dt.patch_pose.heading)
    sh = math.sin(dt.patch_pose.heading)
    xs = (ch * ug - sh * vg) / patch.scale + dt.patch_pose.x
    ys = (sh * ug + ch * vg) / patch.scale + dt.patch_pose.y
    obs_r = world.obs_raster
    iu = np.clip(np.rint(xs * obs_r.scale).astype(np.int64), 0, obs_r.height - 1)
    iv = np.clip(np.rint(ys * obs_r.scale).astype(np.int64), 0, obs_r.width - 1)
    classes = world.terrain[iu, iv]
    counts = np.bincount(classes.ravel(), minlength=world.num_terrains)
    return counts / counts.sum()


def select_diverse_patches(world: World, test_ds, n_patches: int = 5,
                           min_classes: int = 3, min_fraction: float = 0.1) -> list[int]:
    """Indices of the first test patches whose footprint holds at least
    min_classes terrain classes with min_fraction coverage each."""
    chosen = []
    for i in range(len(test_ds)):
        comp = terrain_composition(world, test_ds[i])
        if (comp >= min_fraction).sum() >= min_classes:
            chosen.append(i)
            if len(chosen) == n_patches:
                return chosen
    raise ArgumentError(
        f"only {len(chosen)} of the requested {n_patches} diverse patches found"
    )


@dataclass
class PatchFilterOutcome:
    patch_index: int
    reduction_pct: float
    median_pf_error: float
    median_dr_error: float


def filter_trajectory_spec(patch_size: int, inset: float, steps: int,
                           n_sequences: int, noise: OdometryNoise,
                           seed: int) -> TrajectorySpec:
    """Straight line across the patch middle, inset from both edges,
    expressed in the patch pixel frame."""
    mid = (patch_size - 1) / 2.0
    return TrajectorySpec(
        start=WorldPose(mid, inset, 0.0),
        end=WorldPose(mid, patch_size - 1 - inset, 0.0),
        steps=steps, n_sequences=n_sequences, noise=noise, seed=seed,
    )


def encode_truth_observations(obs_params: ObsEncoderParams, obs_raster: Raster,
                              dt: DataTuple, spec: TrajectorySpec,
                              obs_size: int):
    """Observation representations along the truth trajectory: crops are cut
    from the observation source at the truth poses (patch pixel frame) and
    encoded without augmentation."""
    from .particle_filter import simulate_trajectory

    truth, _ = simulate_trajectory(spec)
    reps = []
    for u, v, _h in truth:
        crop = extract_obs(obs_raster, dt.patch_pose, dt.map_patch.scale,
                           PixelCoord(int(round(u)), int(round(v))), obs_size)
        reps.append(encode_obs(obs_params, crop))
    return reps


def evaluate_filter_on_patch(map_params: MapEncoderParams,
                             obs_params: ObsEncoderParams,
                             world: World, dt: DataTuple, patch_index: int,
                             spec: TrajectorySpec, cfg: FilterConfig,
                             obs_size: int = 224) -> PatchFilterOutcome:
    """Trajectory-correction protocol on one patch: encode the belief map,
    encode observations at the truth poses, run every noisy sequence."""
    bm = encode_map(map_params, dt.map_patch)
    reps = encode_truth_observations(obs_params, world.obs_raster, dt, spec, obs_size)
    result = evaluate_filter(bm, reps, spec, cfg,
                             frame_pose=WorldPose(0.0, 0.0, 0.0),
                             frame_scale=1.0)
    return PatchFilterOutcome(patch_index, result.reduction_pct,
                              result.median_pf_error, result.median_dr_error)
