#!/usr/bin/env python3
"""Wise-crop vs random-crop study for the single U-Net."""

import argparse
import json
from pathlib import Path

from ndsseg.experiments import make_benchmark, sampling_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/sampling"))
    ap.add_argument("--fields", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--side", type=int, default=32)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    manifest = make_benchmark(args.out / "data", num_fields=args.fields)
    summary = sampling_study(manifest, args.out, seeds=tuple(args.seeds),
                             epochs=args.epochs, lr=args.lr, side=args.side)
    print(json.dumps(summary["medians"], indent=2))


if __name__ == "__main__":
    main()
