"""croscale-train-deep: train the CNN encoders on an interchange dataset
and export encoded belief maps / representation sets."""

from __future__ import annotations

import argparse
import sys

from . import formats
from .trainer import DeepTrainConfig, deep_train


def parse_kv(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="croscale-train-deep", description=__doc__)
    ap.add_argument("--data", required=True, help="dataset directory")
    ap.add_argument("--config", help="key=value training config")
    ap.add_argument("--export", required=True, help="output directory for CSBM/CSRV")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--loss-csv", help="optional loss history CSV")
    args = ap.parse_args(argv)

    kv = parse_kv(args.config) if args.config else {}
    cfg = DeepTrainConfig.from_kv(kv)
    if args.seed is not None:
        cfg.seed = args.seed

    def progress(epoch, loss, lr):
        if epoch % 10 == 0:
            print(f"epoch {epoch}: loss {loss:.6f} lr {lr:g}", flush=True)

    try:
        result = deep_train(args.data, cfg, export_dir=args.export,
                            progress=progress)
    except formats.FormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except RuntimeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4

    if args.loss_csv:
        with open(args.loss_csv, "w") as fh:
            fh.write("epoch,mean_loss,lr\n")
            for epoch, loss, lr in result.history:
                fh.write(f"{epoch},{loss:.10g},{lr:.10g}\n")
    final = result.history[-1][1] if result.history else float("nan")
    print(f"trained {cfg.epochs} epochs; final loss {final:.6f}; "
          f"exported {len(result.exported)} files to {args.export}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
