#!/usr/bin/env python3
"""Memorization sanity check: ProposedShared on four synthetic sequences."""

import argparse
import json
from pathlib import Path

from ndsseg.experiments import overfit_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/overfit"))
    ap.add_argument("--epochs", type=int, default=150)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    result = overfit_study(args.out, epochs=args.epochs, lr=args.lr, seed=args.seed)
    print(json.dumps(result, indent=2))


if __name__ == "__main__":
    main()
