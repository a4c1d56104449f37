"""Build the balanced 1000/1000 MNIST split used by the classification check.

Reads ``data/mnist_5k.csv.gz`` (784 pixel columns then the label, 500
digits per class) and writes four IDX files: the first 100 digits of each
class (by row order) form the training split, the next 100 the test split.
"""

import argparse
import gzip
from pathlib import Path

import numpy as np

from lpnet.data import write_idx

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--source", type=Path, default=ROOT / "data" / "mnist_5k.csv.gz")
    ap.add_argument("--out", type=Path, default=ROOT / "data")
    ap.add_argument("--per-class", type=int, default=100)
    args = ap.parse_args(argv)

    with gzip.open(args.source, "rt") as fh:
        table = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    pixels, labels = table[:, :-1].astype(np.uint8), table[:, -1]
    k = args.per_class
    train, test = [], []
    for c in range(10):
        rows = np.flatnonzero(labels == c)
        train.append(rows[:k])
        test.append(rows[k:2 * k])
    args.out.mkdir(parents=True, exist_ok=True)
    for name, rows in (("train", np.concatenate(train)), ("test", np.concatenate(test))):
        write_idx(args.out / f"subset-{name}-images.idx", pixels[rows].reshape(-1, 28, 28))
        write_idx(args.out / f"subset-{name}-labels.idx", labels[rows].astype(np.uint8))
        print(f"{name}: {rows.size} digits -> {args.out}/subset-{name}-*.idx")


if __name__ == "__main__":
    main()
