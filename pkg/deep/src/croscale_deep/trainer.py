"""Joint training of the deep encoders on an interchange-format dataset,
with CSBM/CSRV export of the encoded test split.

The loop mirrors the contrastive protocol: every observation is augmented
into two views, anchors are gathered from the predicted belief maps at the
observation coordinates, and both networks are optimized with SGD-momentum
under the two-positive NT-Xent / Bhattacharyya loss. The learning rate
decays by plateau_factor when the epoch-mean loss stalls.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch

from . import formats
from .loss import ntxent_two_positive
from .model import build_map_encoder, build_obs_encoder


@dataclass
class DeepTrainConfig:
    backbone_map: str = "mini"
    backbone_obs: str = "mini"
    C: int = 5
    tau: float = 1.0
    lr: float = 0.002
    momentum: float = 0.9
    weight_decay: float = 0.0
    plateau_factor: float = 0.1
    plateau_patience: int = 20
    epochs: int = 300
    b: int = 8
    n: int = 6
    enable_c4: bool = True
    enable_photometric: bool = True
    brightness: float = 0.2     # multiplier jitter half-width
    contrast: float = 0.2
    seed: int = 0

    @classmethod
    def from_kv(cls, cfg: dict) -> "DeepTrainConfig":
        defaults = cls()
        kwargs = {}
        for name, value in defaults.__dict__.items():
            if name not in cfg:
                kwargs[name] = value
            elif isinstance(value, bool):
                kwargs[name] = cfg[name].lower() in ("1", "true", "yes", "on")
            elif isinstance(value, int):
                kwargs[name] = int(cfg[name])
            elif isinstance(value, float):
                kwargs[name] = float(cfg[name])
            else:
                kwargs[name] = cfg[name]
        return cls(**kwargs)


class TupleStore:
    """Dataset split loaded into float32 tensors (channel-first)."""

    def __init__(self, data_dir: str, split: str):
        rows = [name for name, s in formats.read_manifest(data_dir) if s == split]
        if not rows:
            raise formats.FormatError(f"no tuples with split {split!r} in {data_dir}")
        self.names = rows
        self.maps = []
        self.obs = []
        self.coords = []
        lo, hi = np.inf, -np.inf
        for name in rows:
            tdir = os.path.join(data_dir, name)
            mvals, _, _ = formats.read_raster(os.path.join(tdir, "map.csrr"))
            coords = formats.read_coords(tdir)
            ovals = []
            for j in range(coords.shape[0]):
                o, _, _ = formats.read_raster(os.path.join(tdir, f"obs_{j:02d}.csrr"))
                ovals.append(o)
                lo = min(lo, float(o.min()))
                hi = max(hi, float(o.max()))
            self.maps.append(torch.from_numpy(mvals.copy()).permute(2, 0, 1))
            self.obs.append(torch.from_numpy(np.stack(ovals)).permute(0, 3, 1, 2))
            self.coords.append(torch.from_numpy(coords))
        self.value_range = (lo, hi)

    def __len__(self) -> int:
        return len(self.names)


def augment_views(obs: torch.Tensor, cfg: DeepTrainConfig,
                  value_range: tuple[float, float],
                  gen: torch.Generator) -> torch.Tensor:
    """(n, D, H, W) observations -> (n, 2, D, H, W) augmented views."""
    views = []
    for _ in range(2):
        out = obs.clone()
        if cfg.enable_c4:
            rots = torch.randint(0, 4, (obs.shape[0],), generator=gen)
            out = torch.stack([torch.rot90(o, int(k), dims=(1, 2))
                               for o, k in zip(out, rots)])
        if cfg.enable_photometric:
            shape = (obs.shape[0], 1, 1, 1)
            b_mult = 1.0 + cfg.brightness * (2 * torch.rand(shape, generator=gen) - 1)
            c_mult = 1.0 + cfg.contrast * (2 * torch.rand(shape, generator=gen) - 1)
            out = out * b_mult
            means = out.mean(dim=(2, 3), keepdim=True)
            out = (out - means) * c_mult + means
            out = out.clamp(value_range[0], value_range[1])
        views.append(out)
    return torch.stack(views, dim=1)


@dataclass
class DeepTrainResult:
    map_encoder: torch.nn.Module
    obs_encoder: torch.nn.Module
    history: list[tuple[int, float, float]]
    exported: list[str]


def deep_train(data_dir: str, cfg: DeepTrainConfig,
               export_dir: str | None = None,
               train_split: str = "train",
               export_split: str = "test",
               progress=None) -> DeepTrainResult:
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed + 1)

    store = TupleStore(data_dir, train_split)
    d_map = store.maps[0].shape[0]
    d_obs = store.obs[0].shape[1]
    map_enc = build_map_encoder(cfg.backbone_map, d_map, cfg.C)
    obs_enc = build_obs_encoder(cfg.backbone_obs, d_obs, cfg.C)
    params = list(map_enc.parameters()) + list(obs_enc.parameters())
    opt = torch.optim.SGD(params, lr=cfg.lr, momentum=cfg.momentum,
                          weight_decay=cfg.weight_decay)

    lr = cfg.lr
    best = float("inf")
    stall = 0
    history: list[tuple[int, float, float]] = []
    rng = np.random.default_rng(cfg.seed + 2)

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(store))
        total = 0.0
        count = 0
        for start in range(0, len(store), cfg.b):
            idx = order[start:start + cfg.b]
            opt.zero_grad()
            anchors = []
            view_list = []
            for ti in idx:
                bm = map_enc(store.maps[ti].unsqueeze(0))[0]      # (C, H, W)
                uv = store.coords[ti]
                anchors.append(bm[:, uv[:, 0], uv[:, 1]].T)        # (n, C)
                views = augment_views(store.obs[ti], cfg, store.value_range, gen)
                flat = views.reshape(-1, *views.shape[2:])
                y = obs_enc(flat).reshape(views.shape[0], 2, cfg.C)
                view_list.append(y)
            z = torch.cat(anchors, dim=0)
            y = torch.cat(view_list, dim=0)
            loss = ntxent_two_positive(z, y, cfg.tau)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total += float(loss.detach()) * z.shape[0]
            count += z.shape[0]
        mean_loss = total / max(count, 1)
        history.append((epoch, mean_loss, lr))
        if progress is not None:
            progress(epoch, mean_loss, lr)
        if best - mean_loss > 1e-4 * max(abs(best), 1e-12):
            best = mean_loss
            stall = 0
        else:
            stall += 1
            if stall >= cfg.plateau_patience:
                lr *= cfg.plateau_factor
                for group in opt.param_groups:
                    group["lr"] = lr
                stall = 0

    exported: list[str] = []
    if export_dir is not None:
        exported = export_encodings(map_enc, obs_enc, data_dir, export_dir,
                                    export_split)
    return DeepTrainResult(map_enc, obs_enc, history, exported)


@torch.no_grad()
def export_encodings(map_enc, obs_enc, data_dir: str, export_dir: str,
                     split: str = "test") -> list[str]:
    """Encode every tuple of a split and write belief_<name>.csbm plus
    reps_<name>.csrv (observation representations with truth coordinates)."""
    os.makedirs(export_dir, exist_ok=True)
    map_enc.eval()
    obs_enc.eval()
    store = TupleStore(data_dir, split)
    written = []
    for i, name in enumerate(store.names):
        bm = map_enc(store.maps[i].unsqueeze(0))[0]               # (C, H, W)
        belief = bm.permute(1, 2, 0).numpy()
        bpath = os.path.join(export_dir, f"belief_{name}.csbm")
        formats.write_belief(bpath, belief)
        reps = obs_enc(store.obs[i]).numpy()
        rpath = os.path.join(export_dir, f"reps_{name}.csrv")
        formats.write_repset(rpath, store.coords[i].numpy(), reps)
        written.extend([bpath, rpath])
    return written
