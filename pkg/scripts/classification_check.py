"""Four-node network on the balanced MNIST subset versus the raw-pixel k-NN baseline.

Builds the subset IDX files when they are missing, trains with the given
config and reports both accuracies and whether the learned representation
wins by at least one percentage point.
"""

import argparse
import json
import subprocess
import sys
from pathlib import Path

from lpnet.cli import main as cli_main

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "syn_n4g4_subset.ini")
    ap.add_argument("--out", type=Path, default=ROOT / "runs" / "syn-n4g4-subset")
    ap.add_argument("--iterations", type=int, help="shorter run for a quick look")
    args = ap.parse_args(argv)

    if not (ROOT / "data" / "subset-train-images.idx").exists():
        subprocess.run([sys.executable, str(ROOT / "scripts" / "prepare_mnist_subset.py")],
                       check=True)
    config_path = args.config
    if args.iterations is not None:
        text = config_path.read_text().replace("iterations = 120",
                                               f"iterations = {args.iterations}")
        config_path = args.config.parent / f".{args.config.stem}-short.ini"
        config_path.write_text(text)
    try:
        code = cli_main(["-v", "train", "--config", str(config_path), "--out", str(args.out)])
    finally:
        if config_path != args.config:
            config_path.unlink()
    if code:
        return code
    summary = json.loads((args.out / "summary.json").read_text())
    acc, base = summary["final_accuracy"], summary["baseline_accuracy"]
    margin = 100 * (acc - base)
    print(f"learned representation {acc:.3f}, raw pixels {base:.3f}, margin {margin:+.1f} points")
    print("PASS" if margin >= 1.0 else "FAIL")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
