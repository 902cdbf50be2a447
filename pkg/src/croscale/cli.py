"""Command-line interface.

Subcommands: synth, sample, train, encode-map, encode-obs, infer, filter,
eval-recall, render-seg, profile. Every command takes long-form flags; a
single --seed drives all stochastic paths. Exit codes: 0 success, 2 argument
error, 3 data/format error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import encoders, inference, io_interchange as io, particle_filter as pf
from .core_types import PixelCoord, Raster, WorldPose
from .errors import ArgumentError, FormatError, NumericalError
from .sampler import sample_tuple
from .synth_world import generate_world


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    return io.parse_config(path)


def cmd_synth(args) -> int:
    spec = io.world_spec_from_config(_load_config(args.spec), seed=args.seed)
    world = generate_world(spec)
    os.makedirs(args.out, exist_ok=True)
    io.write_raster(os.path.join(args.out, "map.csrr"), world.map_raster)
    io.write_raster(os.path.join(args.out, "obs.csrr"), world.obs_raster)
    terrain = Raster(world.terrain.astype(np.float64), scale=world.obs_raster.scale)
    io.write_raster(os.path.join(args.out, "terrain.csrr"), terrain)
    print(f"world written to {args.out}: map {world.map_raster.height}x"
          f"{world.map_raster.width}x{world.map_raster.channels}, "
          f"obs {world.obs_raster.height}x{world.obs_raster.width}x"
          f"{world.obs_raster.channels}, K={world.num_terrains}")
    return 0


def cmd_sample(args) -> int:
    cfg_dict = _load_config(args.config)
    cfg = io.sample_config_from_config(cfg_dict, seed=args.seed)
    map_src = io.read_raster(args.map)
    obs_src = io.read_raster(args.obs)
    n = args.n_tuples
    n_train = int(cfg_dict.get("n_train", n))
    n_val = int(cfg_dict.get("n_val", 0))
    n_test = int(cfg_dict.get("n_test", 0))
    if n_train + n_val + n_test != n:
        raise ArgumentError(
            f"split counts {n_train}+{n_val}+{n_test} != --n-tuples {n}"
        )
    seed_seq = np.random.SeedSequence(cfg.seed)
    children = seed_seq.spawn(n + 1)
    splits = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    shuffle_rng = np.random.Generator(np.random.PCG64(children[0]))
    splits = [splits[i] for i in shuffle_rng.permutation(n)]

    os.makedirs(args.out, exist_ok=True)
    rows = []
    for i in range(n):
        rng = np.random.Generator(np.random.PCG64(children[i + 1]))
        dt = sample_tuple(map_src, obs_src, cfg, rng)
        name = io.tuple_dirname(i)
        io.write_tuple(os.path.join(args.out, name), dt)
        rows.append((name, splits[i]))
    io.write_manifest(args.out, rows)
    print(f"wrote {n} tuples to {args.out} "
          f"(train={n_train}, val={n_val}, test={n_test})")
    return 0


def cmd_train(args) -> int:
    cfg_dict = _load_config(args.config)
    cfg = io.train_config_from_config(cfg_dict, seed=args.seed)
    aug = io.augment_config_from_config(cfg_dict)
    dataset = io.DatasetReader(args.data, split=args.split)
    if len(dataset) == 0:
        raise ArgumentError(f"no tuples with split {args.split!r} in {args.data}")
    rng = np.random.default_rng(cfg.seed)
    result = encoders.train(dataset, cfg, rng, augment_cfg=aug)
    io.write_params(args.out + ".map.cspr", result.map_params)
    io.write_params(args.out + ".obs.cspr", result.obs_params)
    with open(args.out + ".loss.csv", "w") as fh:
        fh.write("epoch,mean_loss,lr\n")
        for epoch, loss, lr in result.history:
            fh.write(f"{epoch},{loss:.10g},{lr:.10g}\n")
    final = result.history[-1][1] if result.history else float("nan")
    print(f"trained {cfg.epochs} epochs on {len(dataset)} tuples; "
          f"final loss {final:.6f}; params at {args.out}.map.cspr / {args.out}.obs.cspr")
    return 0


def cmd_encode_map(args) -> int:
    params = io.read_params(args.params)
    if not isinstance(params, encoders.MapEncoderParams):
        raise ArgumentError(f"{args.params} does not hold map-encoder parameters")
    patch = io.read_raster(getattr(args, "in"))
    bm = encoders.encode_map(params, patch)
    io.write_belief(args.out, bm)
    print(f"belief map {bm.height}x{bm.width}x{bm.channels} written to {args.out}")
    return 0


def cmd_encode_obs(args) -> int:
    params = io.read_params(args.params)
    if not isinstance(params, encoders.ObsEncoderParams):
        raise ArgumentError(f"{args.params} does not hold observation-encoder parameters")
    reps = []
    if args.tuple_dir:
        dt = io.read_tuple(args.tuple_dir)
        for p, obs in zip(dt.coords, dt.observations):
            reps.append((p, encoders.encode_obs(params, obs)))
    else:
        in_path = getattr(args, "in")
        if in_path is None:
            raise ArgumentError("encode-obs needs --in or --tuple-dir")
        view = io.read_raster(in_path)
        reps.append((PixelCoord(0, 0), encoders.encode_obs(params, view)))
    io.write_repset(args.out, reps)
    print(f"{len(reps)} representation(s) written to {args.out}")
    return 0


def cmd_infer(args) -> int:
    bm = io.read_belief(args.belief)
    reps = io.read_repset(args.obs_rep)
    model = inference.DirichletModel(theta=args.theta)
    heat = inference.likelihood_map(bm, reps[0][1], model)
    if args.out_heat:
        with open(args.out_heat, "wb") as fh:
            fh.write(heat.log_density.astype("<f4").tobytes())
    if args.out_png:
        with open(args.out_png, "wb") as fh:
            fh.write(inference.render_heat_pgm(heat))
    print(f"likelihood map {heat.height}x{heat.width}: "
          f"log-density range [{heat.log_density.min():.4f}, {heat.log_density.max():.4f}]")
    return 0


def cmd_eval_recall(args) -> int:
    bm = io.read_belief(args.belief)
    reps = io.read_repset(args.reps)
    model = inference.DirichletModel(theta=args.theta)
    hits = 0
    for p, vec in reps:
        heat = inference.likelihood_map(bm, vec, model)
        hits += inference.recall_at_k(heat, p, args.k)
    rate = hits / len(reps)
    print(f"recall@{args.k}%: {rate:.4f} ({hits}/{len(reps)})")
    return 0


def cmd_render_seg(args) -> int:
    bm = io.read_belief(args.belief)
    classes = inference.segmentation_render(bm)
    with open(args.out, "wb") as fh:
        fh.write(inference.render_classes_pgm(classes))
    print(f"segmentation render written to {args.out}")
    return 0


def cmd_profile(args) -> int:
    bm = io.read_belief(args.belief)
    u0, v0 = (int(s) for s in args.start.split(","))
    u1, v1 = (int(s) for s in args.end.split(","))
    prof = inference.belief_profile(bm, PixelCoord(u0, v0), PixelCoord(u1, v1),
                                    args.samples)
    with open(args.out, "w") as fh:
        fh.write("sample," + ",".join(f"c{c}" for c in range(bm.channels)) + "\n")
        for i, row in enumerate(prof):
            fh.write(f"{i}," + ",".join(f"{x:.8g}" for x in row) + "\n")
    print(f"profile with {args.samples} samples written to {args.out}")
    return 0


def cmd_filter(args) -> int:
    bm = io.read_belief(args.belief)
    reps = io.read_repset(args.obs_reps)
    cfg_dict = _load_config(args.traj)
    spec = io.trajectory_spec_from_config(cfg_dict, seed=args.seed)
    fcfg = io.filter_config_from_config(cfg_dict)
    fcfg = pf.FilterConfig(
        n_particles=fcfg.n_particles, ess_threshold=fcfg.ess_threshold,
        likelihood_floor=fcfg.likelihood_floor,
        weight_mode=args.mode or fcfg.weight_mode,
        theta=args.theta if args.theta is not None else fcfg.theta,
        process_noise=fcfg.process_noise,
    )
    frame_pose = WorldPose(0.0, 0.0, 0.0)
    frame_scale = float(cfg_dict.get("frame_scale", 1.0))
    obs_reps = [vec for _, vec in reps]
    result = pf.evaluate_filter(bm, obs_reps, spec, fcfg, frame_pose, frame_scale)

    with open(args.out, "w") as fh:
        fh.write("sequence_id,step,truth_x,truth_y,dr_x,dr_y,pf_x,pf_y\n")
        for s in range(spec.n_sequences):
            for t in range(spec.steps):
                fh.write(
                    f"{s},{t},{result.truth[t, 0]:.6f},{result.truth[t, 1]:.6f},"
                    f"{result.dr_poses[s, t, 0]:.6f},{result.dr_poses[s, t, 1]:.6f},"
                    f"{result.pf_estimates[s, t, 0]:.6f},{result.pf_estimates[s, t, 1]:.6f}\n"
                )
    if args.summary:
        with open(args.summary, "w") as fh:
            fh.write("median_pf_error,median_dr_error,reduction_pct\n")
            fh.write(f"{result.median_pf_error:.6f},{result.median_dr_error:.6f},"
                     f"{result.reduction_pct:.4f}\n")
    print(f"median accumulated L2: filter {result.median_pf_error:.3f} m, "
          f"dead reckoning {result.median_dr_error:.3f} m, "
          f"reduction {result.reduction_pct:.2f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="croscale",
                                description="Cross-scale belief-map localization toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic two-modality world")
    sp.add_argument("--spec", help="world config file")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("sample", help="sample a data-tuple dataset")
    sp.add_argument("--map", required=True)
    sp.add_argument("--obs", required=True)
    sp.add_argument("--n-tuples", type=int, required=True)
    sp.add_argument("--config", help="sampling config file")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("train", help="train both encoders jointly")
    sp.add_argument("--data", required=True)
    sp.add_argument("--config", help="training config file")
    sp.add_argument("--out", required=True, help="output prefix for .map.cspr/.obs.cspr/.loss.csv")
    sp.add_argument("--split", default="train")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("encode-map", help="encode a map patch into a belief map")
    sp.add_argument("--params", required=True)
    sp.add_argument("--in", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_encode_map)

    sp = sub.add_parser("encode-obs", help="encode observation view(s)")
    sp.add_argument("--params", required=True)
    sp.add_argument("--in", help="single observation raster")
    sp.add_argument("--tuple-dir", help="encode every observation of one dataset tuple")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_encode_obs)

    sp = sub.add_parser("infer", help="likelihood heat map of one representation")
    sp.add_argument("--belief", required=True)
    sp.add_argument("--obs-rep", required=True)
    sp.add_argument("--theta", type=float, default=5.0)
    sp.add_argument("--out-heat", help="raw little-endian f32 log-density file")
    sp.add_argument("--out-png", help="8-bit grayscale PGM image path")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval-recall", help="top-k%% recall of a repset on one belief map")
    sp.add_argument("--belief", required=True)
    sp.add_argument("--reps", required=True)
    sp.add_argument("--k", type=float, default=1.0)
    sp.add_argument("--theta", type=float, default=5.0)
    sp.set_defaults(func=cmd_eval_recall)

    sp = sub.add_parser("render-seg", help="argmax segmentation render of a belief map")
    sp.add_argument("--belief", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_render_seg)

    sp = sub.add_parser("profile", help="belief profile along a segment")
    sp.add_argument("--belief", required=True)
    sp.add_argument("--from", dest="start", required=True, metavar="U,V")
    sp.add_argument("--to", dest="end", required=True, metavar="U,V")
    sp.add_argument("--samples", type=int, default=100)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_profile)

    sp = sub.add_parser("filter", help="particle-filter evaluation on a belief map")
    sp.add_argument("--belief", required=True)
    sp.add_argument("--obs-reps", required=True, help="repset along the trajectory")
    sp.add_argument("--traj", required=True, help="trajectory + filter config file")
    sp.add_argument("--mode", choices=pf.WEIGHT_MODES, default=None)
    sp.add_argument("--theta", type=float, default=None)
    sp.add_argument("--out", required=True, help="per-step CSV")
    sp.add_argument("--summary", help="summary CSV")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_filter)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ArgumentError as exc:
        print(f"argument error: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
