"""Single-goal propagation run on synthetic Gaussian classes.

Trains with one dynamic goal and prints the propagated goal error at a few
iterations together with the final/first ratio.
"""

import argparse
import csv
import json
from pathlib import Path

from lpnet.cli import main as cli_main

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "theorem1_desk.ini")
    ap.add_argument("--out", type=Path, default=ROOT / "runs" / "theorem1-desk")
    ap.add_argument("--seed", type=int)
    args = ap.parse_args(argv)

    cli_args = ["theorem1", "--config", str(args.config), "--out", str(args.out)]
    if args.seed is not None:
        cli_args += ["--seed", str(args.seed)]
    code = cli_main(cli_args)
    if code:
        return code
    with open(args.out / "goal_error.csv") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows[:: max(1, len(rows) // 10)] + rows[-1:]:
        print(f"iteration {int(row['iteration']):4d}  goal error {float(row['goal_error']):.6g}")
    summary = json.loads((args.out / "summary.json").read_text())
    verdict = "below" if summary["reduction"] <= 0.1 else "above"
    print(f"final/first = {summary['reduction']:.3e} ({verdict} the 0.1 gate)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
