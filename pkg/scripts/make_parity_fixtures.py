#!/usr/bin/env python3
"""Emit shared loss-parity fixtures for alternate trainer implementations.

Writes anchors and views of a few fixed batches as repset files plus a
manifest listing tau and the loss value computed here. An independent
implementation must reproduce each loss within 1e-5 relative.
"""

import argparse
import os
import sys

import numpy as np

from croscale.contrastive import LossBatch, ntxent_loss
from croscale.core_types import PixelCoord, SimplexVec
from croscale.io_interchange import write_repset


def dyadic_simplex(rng, c, ticks=4096):
    raw = rng.integers(1, 100, size=c).astype(np.float64)
    counts = np.rint(raw / raw.sum() * ticks)
    counts[-1] = ticks - counts[:-1].sum()
    if counts.min() <= 0:
        return dyadic_simplex(rng, c, ticks)
    return counts / ticks


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    rng = np.random.default_rng(args.seed)
    cases = [
        ("b1n1", 1, 5, 1.0),
        ("b2n3", 6, 5, 1.0),
        ("b8n6", 48, 5, 1.0),
        ("tau05", 12, 4, 0.5),
    ]
    manifest = ["name,tau,loss"]
    for name, bn, c, tau in cases:
        anchors = np.array([dyadic_simplex(rng, c) for _ in range(bn)])
        views = np.array([[dyadic_simplex(rng, c) for _ in range(2)]
                          for _ in range(bn)])
        loss = ntxent_loss(LossBatch(anchors, views, tau))
        write_repset(os.path.join(args.out, f"{name}_anchors.csrv"),
                     [(PixelCoord(i, 0), SimplexVec(anchors[i])) for i in range(bn)])
        write_repset(os.path.join(args.out, f"{name}_views.csrv"),
                     [(PixelCoord(i, lam), SimplexVec(views[i, lam]))
                      for i in range(bn) for lam in range(2)])
        manifest.append(f"{name},{tau:.10g},{loss:.12g}")
    with open(os.path.join(args.out, "manifest.csv"), "w") as fh:
        fh.write("\n".join(manifest) + "\n")
    print(f"wrote {len(cases)} parity fixtures to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
