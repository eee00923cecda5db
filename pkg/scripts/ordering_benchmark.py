#!/usr/bin/env python3
"""Architecture/task ordering study on the synthetic benchmark.

Trains ProposedShared (detection, both prediction windows) and SingleUNet
(detection) over three seeds and reports median test IOU per configuration.
"""

import argparse
import json
from pathlib import Path

from ndsseg.experiments import make_benchmark, ordering_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/ordering"))
    ap.add_argument("--fields", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    manifest = make_benchmark(args.out / "data", num_fields=args.fields)
    summary = ordering_study(manifest, args.out, seeds=tuple(args.seeds),
                             epochs=args.epochs, lr=args.lr)
    print(json.dumps(summary["medians"], indent=2))


if __name__ == "__main__":
    main()
