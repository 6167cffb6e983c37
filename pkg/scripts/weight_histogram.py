"""Text histogram of one layer's weights from a checkpoint.

    python scripts/weight_histogram.py runs/desk/baseline.pqck s1.conv1 [--bins 31]

Useful for eyeballing the bell shape that motivates finer levels near zero.
"""
import argparse

import numpy as np

from pqcomp import checkpoint
from pqcomp.data import weight_histogram


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("checkpoint")
    p.add_argument("layer")
    p.add_argument("--bins", type=int, default=31)
    p.add_argument("--width", type=int, default=60, help="characters for the tallest bar")
    args = p.parse_args()

    entries = {name: (data, keep) for name, data, keep in checkpoint.load(args.checkpoint)}
    if args.layer not in entries:
        raise SystemExit(f"no layer {args.layer!r}; available: {', '.join(entries)}")
    data, keep = entries[args.layer]
    if keep is not None:
        data = data[keep]  # pruned filters are all zero and would swamp the center bin
    hist = weight_histogram(np.asarray(data, np.float64), args.bins)
    top = max(c for _, c in hist)
    for center, count in hist:
        print(f"{center:+.4f} {count:>6} {'#' * round(args.width * count / top)}")


if __name__ == "__main__":
    main()
