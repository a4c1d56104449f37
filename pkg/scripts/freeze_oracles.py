"""Recompute the independent oracle values and write tests/data/frozen_oracles.json.

Instances are regenerated from fixed seeds in the tests, so the file only
stores oracle outputs: grid minima for the scalar representation problem,
gradient-descent minima for the forward weight, brute-force discrimination
penalties and loop-based k-NN predictions.
"""

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

import oracles  # noqa: E402

from oracles import (N_1D, N_FORWARD, SEED_1D, SEED_DISCRIMINATION,  # noqa: E402
                     SEED_FORWARD, SEED_KNN)


def freeze():
    out = {}
    out["representation_1d"] = [
        oracles.grid_minimum_1d(**oracles.representation_instance_1d(
            np.random.default_rng([SEED_1D, i])))
        for i in range(N_1D)
    ]
    forward = []
    for i in range(N_FORWARD):
        p = oracles.local_instance(np.random.default_rng([SEED_FORWARD, i]))
        _, value = oracles.forward_weight_oracle(p, p.A)
        forward.append(value)
    out["forward_weight"] = forward
    out["discrimination"] = [
        oracles.brute_force_discrimination(*oracles.discrimination_instance(SEED_DISCRIMINATION, i))
        for i in range(10)
    ]
    knn = []
    for i in range(10):
        train, labels, test, k = oracles.knn_instance(SEED_KNN, i)
        knn.append(oracles.knn_by_hand(train, labels, test, k).tolist())
    out["knn"] = knn
    return out


def main():
    path = ROOT / "tests" / "data" / "frozen_oracles.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(freeze(), indent=1) + "\n")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
