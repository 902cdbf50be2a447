"""Toy differentiable encoders and their joint contrastive trainer.

The map encoder is a pixels-to-pixels k x k affine followed by a per-pixel
softmax: it turns a D_m-channel patch into a belief map with the same height
and width. The observation encoder pools a view into per-channel means plus
normalized histograms, applies an affine and a softmax, and emits one
C-dimensional distribution. Both are trained jointly with the two-positive
NT-Xent / Bhattacharyya loss using SGD with momentum and plateau-triggered
learning-rate decay.

Everything here is float64; gradients are exact and checked against central
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .contrastive import LossBatch, ntxent_grad, ntxent_loss
from .core_types import BeliefMap, Raster, SimplexVec
from .errors import ArgumentError, NumericalError
from .sampler import AugmentConfig, apply_augment, draw_augment_params

_PREFIX_BLOCK = 64


@dataclass(frozen=True)
class MapEncoderParams:
    """k x k pixels-to-pixels affine + softmax.

    weights: (C, k*k*D_m), neighborhood flattened in (dy, dx, channel) order.
    """

    kernel_size: int
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ArgumentError(f"kernel_size must be odd, got {self.kernel_size}")
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ArgumentError("weights must be (C, k*k*D) and bias (C,)")
        if w.shape[1] % (self.kernel_size ** 2) != 0:
            raise ArgumentError("weight width must be a multiple of k^2")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ArgumentError("parameters must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1] // (self.kernel_size ** 2)


@dataclass(frozen=True)
class ObsEncoderParams:
    """Pooled-feature affine + softmax observation encoder.

    Features per input channel: [mean, B normalized histogram bins], laid out
    channel-major; bin_edges has shape (D_o, B+1) and is fixed from the
    training dataset's global per-channel range.
    """

    bin_edges: np.ndarray
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.bin_edges, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if e.ndim != 2 or e.shape[1] < 2:
            raise ArgumentError("bin_edges must be (D_o, B+1) with B >= 1")
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ArgumentError("weights must be (C, D_o*(1+B)) and bias (C,)")
        if w.shape[1] != e.shape[0] * (e.shape[1] - 1 + 1):
            raise ArgumentError(
                f"weight width {w.shape[1]} inconsistent with bin_edges {e.shape}"
            )
        if not (np.all(np.isfinite(e)) and np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ArgumentError("parameters must be finite")
        for arr in (e, w, b):
            arr.setflags(write=False)
        object.__setattr__(self, "bin_edges", e)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.bin_edges.shape[0]

    @property
    def n_bins(self) -> int:
        return self.bin_edges.shape[1] - 1


@dataclass(frozen=True)
class TrainConfig:
    """Joint training hyperparameters."""

    C: int = 5
    tau: float = 1.0
    lr: float = 0.002
    momentum: float = 0.9
    plateau_factor: float = 0.1
    plateau_patience: int = 20
    epochs: int = 300
    b: int = 8
    n: int = 6
    seed: int = 0
    kernel_size: int = 3
    n_bins: int = 8

    def __post_init__(self):
        if self.lr < 0:
            raise ArgumentError(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ArgumentError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ArgumentError("plateau_factor must be in (0, 1)")
        if self.C < 2 or self.b < 1 or self.n < 1 or self.epochs < 0:
            raise ArgumentError("invalid training dimensions")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ArgumentError("kernel_size must be odd")
        if self.n_bins < 1:
            raise ArgumentError("n_bins must be >= 1")


@dataclass
class TrainResult:
    map_params: MapEncoderParams
    obs_params: ObsEncoderParams
    history: list[tuple[int, float, float]]   # (epoch, mean loss, lr)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, d_probs: np.ndarray) -> np.ndarray:
    """Jacobian-vector product of softmax: p * (g - <g, p>) rowwise."""
    inner = (d_probs * probs).sum(axis=-1, keepdims=True)
    return probs * (d_probs - inner)


def encode_map(params: MapEncoderParams, patch: Raster) -> BeliefMap:
    """Encode a map patch into a belief map of the same height and width.

    Per pixel: edge-replicated k x k neighborhood, affine, softmax. Work is
    laid out channel-first so the correlation accumulations write contiguous
    planes; the softmax itself normalizes each pixel (its residual rounding
    is orders below the simplex tolerance).
    """
    if patch.channels != params.in_channels:
        raise ArgumentError(
            f"patch has {patch.channels} channels, encoder expects {params.in_channels}"
        )
    k = params.kernel_size
    c_out = params.out_channels
    d = params.in_channels
    wk = params.weights.reshape(c_out, k, k, d)
    h, w = patch.height, patch.width
    planes = [np.ascontiguousarray(patch.values[:, :, ch]) for ch in range(d)]
    logits = np.empty((c_out, h, w))
    tmp = np.empty((h, w))
    for c in range(c_out):
        ndimage.correlate(planes[0], wk[c, :, :, 0], output=logits[c],
                          mode="nearest")
        for ch in range(1, d):
            ndimage.correlate(planes[ch], wk[c, :, :, ch], output=tmp,
                              mode="nearest")
            logits[c] += tmp
        if params.bias[c] != 0.0:
            logits[c] += params.bias[c]
    m = logits.max(axis=0)
    np.subtract(logits, m, out=logits)
    np.exp(logits, out=logits)
    logits /= logits.sum(axis=0)
    return BeliefMap(np.ascontiguousarray(logits.transpose(1, 2, 0)))


def gather_neighborhoods(values: np.ndarray, coords, k: int) -> np.ndarray:
    """Edge-replicated k x k neighborhoods at integer pixel coords.

    Returns (len(coords), k*k*D) rows flattened in (dy, dx, channel) order,
    matching the map-encoder weight layout.
    """
    h, w, d = values.shape
    r = k // 2
    out = np.empty((len(coords), k, k, d), dtype=np.float64)
    for i, p in enumerate(coords):
        u, v = int(p.u), int(p.v)
        rows = np.clip(np.arange(u - r, u + r + 1), 0, h - 1)
        cols = np.clip(np.arange(v - r, v + r + 1), 0, w - 1)
        out[i] = values[np.ix_(rows, cols)]
    return out.reshape(len(coords), k * k * d)


def encode_map_at(params: MapEncoderParams, patch: Raster, coords) -> np.ndarray:
    """Belief vectors at selected pixels only; identical to indexing the
    full encode_map output, but O(n) instead of O(H W)."""
    nbhd = gather_neighborhoods(patch.values, coords, params.kernel_size)
    return softmax_rows(nbhd @ params.weights.T + params.bias)


def featurize_view(values: np.ndarray, bin_edges: np.ndarray) -> np.ndarray:
    """Pooled features of an (H, W, D) view: per channel the mean and a
    normalized histogram over fixed edges (values clipped into edge range
    for counting, so every histogram sums to 1)."""
    d = values.shape[2]
    if d != bin_edges.shape[0]:
        raise ArgumentError(
            f"view has {d} channels, bin_edges describe {bin_edges.shape[0]}"
        )
    n = values.shape[0] * values.shape[1]
    feats = np.empty(d * (1 + bin_edges.shape[1] - 1), dtype=np.float64)
    step = 1 + bin_edges.shape[1] - 1
    for ch in range(d):
        # sort before reducing so features are exactly invariant under any
        # reordering of the pixels (C4 rotations in particular)
        x = np.sort(values[:, :, ch], axis=None)
        feats[ch * step] = x.sum() / n
        clipped = np.clip(x, bin_edges[ch, 0], bin_edges[ch, -1])
        counts, _ = np.histogram(clipped, bins=bin_edges[ch])
        feats[ch * step + 1: (ch + 1) * step] = counts / n
    return feats


def encode_obs(params: ObsEncoderParams, view: Raster) -> SimplexVec:
    """Encode one observation view into a C-dimensional distribution."""
    if view.channels != params.in_channels:
        raise ArgumentError(
            f"view has {view.channels} channels, encoder expects {params.in_channels}"
        )
    feats = featurize_view(view.values, params.bin_edges)
    probs = softmax_rows(feats @ params.weights.T + params.bias)
    probs /= probs.sum()
    return SimplexVec(probs)


def init_params(cfg: TrainConfig, d_map: int, d_obs: int, bin_edges: np.ndarray,
                rng: np.random.Generator) -> tuple[MapEncoderParams, ObsEncoderParams]:
    """Zero-mean uniform init with half-width 1/sqrt(fan-in); zero biases."""
    k = cfg.kernel_size
    fan_map = k * k * d_map
    fan_obs = d_obs * (1 + cfg.n_bins)
    wm = rng.uniform(-1.0, 1.0, size=(cfg.C, fan_map)) / np.sqrt(fan_map)
    wo = rng.uniform(-1.0, 1.0, size=(cfg.C, fan_obs)) / np.sqrt(fan_obs)
    return (
        MapEncoderParams(k, wm, np.zeros(cfg.C)),
        ObsEncoderParams(np.asarray(bin_edges, dtype=np.float64), wo, np.zeros(cfg.C)),
    )


class _ObsChannelCache:
    """Sorted pixel values of one observation channel plus coarse prefix
    sums, enabling exact histogram counts and clamped means under any
    monotone per-channel affine jitter via searchsorted."""

    __slots__ = ("sorted_vals", "block_prefix", "n", "raw_mean")

    def __init__(self, x: np.ndarray):
        self.n = x.size
        sv64 = np.sort(x, axis=None)
        self.raw_mean = float(sv64.sum() / self.n)
        sv = sv64.astype(np.float32)
        self.sorted_vals = sv
        blocks = self.n // _PREFIX_BLOCK
        if blocks > 0:
            head = sv[: blocks * _PREFIX_BLOCK].astype(np.float64)
            self.block_prefix = np.concatenate(
                [[0.0], np.cumsum(head.reshape(blocks, _PREFIX_BLOCK).sum(axis=1))]
            )
        else:
            self.block_prefix = np.zeros(1)

    def count_below(self, t: float, inclusive: bool = False) -> int:
        side = "right" if inclusive else "left"
        return int(np.searchsorted(self.sorted_vals, np.float64(t), side=side))

    def prefix_sum(self, i: int) -> float:
        j = min(i // _PREFIX_BLOCK, len(self.block_prefix) - 1)
        s = self.block_prefix[j]
        lo = j * _PREFIX_BLOCK
        if i > lo:
            s += float(self.sorted_vals[lo:i].sum(dtype=np.float64))
        return float(s)

    def affine_features(self, a: float, c: float,
                        clamp: tuple[float, float] | None,
                        edges: np.ndarray) -> tuple[float, np.ndarray]:
        """(mean, normalized histogram) of clamp(a*x + c) without touching
        the raw pixels. a must be > 0. The histogram additionally clips into
        the edge span, mirroring featurize_view; clamped-off mass therefore
        piles into the boundary bins."""
        n = self.n
        if clamp is None:
            mean = a * self.raw_mean + c
            lo_eff, hi_eff = edges[0], edges[-1]
        else:
            lo, hi = clamp
            nb = self.count_below((lo - c) / a)
            na = n - self.count_below((hi - c) / a, inclusive=True)
            mid = self.prefix_sum(n - na) - self.prefix_sum(nb)
            mean = (lo * nb + hi * na + a * mid + c * (n - nb - na)) / n
            lo_eff, hi_eff = max(lo, edges[0]), min(hi, edges[-1])
        t = (np.asarray(edges, dtype=np.float64) - c) / a
        below = np.searchsorted(self.sorted_vals, t, side="left").astype(np.int64)
        below[edges <= lo_eff] = 0       # everything clips to >= lo_eff
        below[edges > hi_eff] = n        # everything clips to <= hi_eff
        counts = np.diff(below).astype(np.float64)
        counts[-1] = n - below[-2]       # last bin closed on the right
        return mean, counts / n


class _TupleCache:
    __slots__ = ("anchor_nbhd", "obs_channels")

    def __init__(self, anchor_nbhd: np.ndarray, obs_channels: list):
        self.anchor_nbhd = anchor_nbhd       # (n_obs, k*k*D_m)
        self.obs_channels = obs_channels     # [n_obs][D_o] _ObsChannelCache


class _RawTupleCache:
    __slots__ = ("anchor_nbhd", "obs_values")

    def __init__(self, anchor_nbhd: np.ndarray, obs_values: list):
        self.anchor_nbhd = anchor_nbhd
        self.obs_values = obs_values         # [n_obs] (H, W, D_o) float32


def _build_caches(dataset, k: int, fast: bool, progress=None):
    """One pass over the dataset: anchor neighborhoods, per-channel feature
    caches (or raw float32 pixels on the slow path) and the global
    per-channel observation range."""
    caches = []
    gmin = None
    gmax = None
    for i in range(len(dataset)):
        dt = dataset[i]
        nbhd = gather_neighborhoods(dt.map_patch.values, dt.coords, k)
        per_obs = []
        for o in dt.observations:
            v = o.values
            cmin = v.min(axis=(0, 1))
            cmax = v.max(axis=(0, 1))
            gmin = cmin if gmin is None else np.minimum(gmin, cmin)
            gmax = cmax if gmax is None else np.maximum(gmax, cmax)
            if fast:
                per_obs.append([_ObsChannelCache(v[:, :, d].ravel())
                                for d in range(v.shape[2])])
            else:
                per_obs.append(v.astype(np.float32))
        if fast:
            caches.append(_TupleCache(nbhd, per_obs))
        else:
            caches.append(_RawTupleCache(nbhd, per_obs))
        if progress is not None:
            progress(i + 1, len(dataset))
    return caches, gmin, gmax


def make_bin_edges(gmin: np.ndarray, gmax: np.ndarray, n_bins: int) -> np.ndarray:
    """Per-channel histogram edges spanning the dataset's global range."""
    edges = np.empty((gmin.size, n_bins + 1))
    for d in range(gmin.size):
        lo, hi = float(gmin[d]), float(gmax[d])
        if hi <= lo:
            hi = lo + 1e-9
        edges[d] = np.linspace(lo, hi, n_bins + 1)
    return edges


def _fast_view_features(obs_cache, params: dict, clamp, edges: np.ndarray) -> np.ndarray:
    """Feature vector of one augmented view from channel caches. C4 rotations
    leave pooled features unchanged, so only the photometric affine is
    applied: a = contrast*brightness, shift = brightness*mean*(1-contrast)."""
    d = len(obs_cache)
    b_mult = params["brightness"]
    c_mult = params["contrast"]
    step = 1 + edges.shape[1] - 1
    feats = np.empty(d * step)
    for ch in range(d):
        cache = obs_cache[ch]
        a = b_mult * c_mult
        shift = b_mult * cache.raw_mean * (1.0 - c_mult)
        mean, hist = cache.affine_features(a, shift, clamp, edges[ch])
        feats[ch * step] = mean
        feats[ch * step + 1:(ch + 1) * step] = hist
    return feats


def loss_and_param_grads(nbhd: np.ndarray, feat: np.ndarray,
                         wm: np.ndarray, bm: np.ndarray,
                         wo: np.ndarray, bo: np.ndarray,
                         tau: float) -> tuple[float, tuple[np.ndarray, ...]]:
    """Forward + backward through the full pipeline for one batch.

    nbhd: (bn, k*k*D_m) anchor neighborhoods; feat: (2bn, F) view features.
    Returns (loss, (dWm, dbm, dWo, dbo)) for the mean NT-Xent loss.
    """
    bn = nbhd.shape[0]
    c = wm.shape[0]
    z = softmax_rows(nbhd @ wm.T + bm)
    y = softmax_rows(feat @ wo.T + bo)
    batch = LossBatch(z, y.reshape(bn, 2, c), tau)
    loss = ntxent_loss(batch)
    dz, dy = ntxent_grad(batch)
    dlog_z = softmax_backward(z, dz)
    dlog_y = softmax_backward(y, dy.reshape(2 * bn, c))
    grads = (
        dlog_z.T @ nbhd,
        dlog_z.sum(axis=0),
        dlog_y.T @ feat,
        dlog_y.sum(axis=0),
    )
    return loss, grads


def train(dataset, cfg: TrainConfig, rng: np.random.Generator | None = None,
          augment_cfg: AugmentConfig | None = None,
          progress=None) -> TrainResult:
    """Jointly train both encoders with SGD-momentum on the NT-Xent loss.

    ``dataset`` is any sequence of DataTuples (a list or a lazy provider
    with __len__/__getitem__). The learning rate decays by plateau_factor
    whenever the epoch-mean loss fails to improve relatively by 1e-4 for
    plateau_patience consecutive epochs. Deterministic for a fixed seed.
    """
    if len(dataset) < 1:
        raise ArgumentError("dataset must be non-empty")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if augment_cfg is None:
        augment_cfg = AugmentConfig()

    first = dataset[0]
    d_map = first.map_patch.channels
    d_obs = first.observations[0].channels
    fast = augment_cfg.is_channelwise_affine(d_obs)

    caches, gmin, gmax = _build_caches(dataset, cfg.kernel_size, fast, progress)
    edges = make_bin_edges(gmin, gmax, cfg.n_bins)
    if augment_cfg.value_range is None:
        clamp = (float(gmin.min()), float(gmax.max()))
    else:
        clamp = augment_cfg.value_range

    map_params, obs_params = init_params(cfg, d_map, d_obs, edges, rng)
    wm = map_params.weights.copy()
    bm = map_params.bias.copy()
    wo = obs_params.weights.copy()
    bo = obs_params.bias.copy()
    vel = [np.zeros_like(p) for p in (wm, bm, wo, bo)]

    lr = cfg.lr
    best = np.inf
    stall = 0
    history: list[tuple[int, float, float]] = []

    n_tuples = len(dataset)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_tuples)
        total_loss = 0.0
        total_anchors = 0
        for start in range(0, n_tuples, cfg.b):
            batch_idx = order[start:start + cfg.b]
            nbhds = []
            feats = []
            for ti in batch_idx:
                cache = caches[int(ti)]
                nbhds.append(cache.anchor_nbhd)
                obs_list = (cache.obs_channels if fast else cache.obs_values)
                for obs in obs_list:
                    for _ in range(2):
                        params = draw_augment_params(augment_cfg, d_obs, rng)
                        if fast:
                            feats.append(_fast_view_features(obs, params, clamp, edges))
                        else:
                            aug = apply_augment(obs.astype(np.float64), params, clamp)
                            feats.append(featurize_view(aug, edges))
            nbhd = np.concatenate(nbhds, axis=0)            # (bn, kkD)
            feat = np.stack(feats, axis=0)                  # (2bn, F)
            bn = nbhd.shape[0]

            loss, grads = loss_and_param_grads(nbhd, feat, wm, bm, wo, bo, cfg.tau)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            for p, v, g in zip((wm, bm, wo, bo), vel, grads):
                v *= cfg.momentum
                v += g
                p -= lr * v

            total_loss += loss * bn
            total_anchors += bn

        mean_loss = total_loss / max(total_anchors, 1)
        history.append((epoch, float(mean_loss), lr))
        if best - mean_loss > 1e-4 * max(abs(best), 1e-12):
            best = mean_loss
            stall = 0
        else:
            stall += 1
            if stall >= cfg.plateau_patience:
                lr *= cfg.plateau_factor
                stall = 0

    return TrainResult(
        MapEncoderParams(cfg.kernel_size, wm, bm),
        ObsEncoderParams(edges, wo, bo),
        history,
    )
