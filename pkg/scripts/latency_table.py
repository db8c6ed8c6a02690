"""Time to fill a window, per app and window size, at 5% capture.

Writes a plot-ready CSV (app, window, n, mean_s, std_s, median_s) to stdout
or --out.
"""
from __future__ import annotations

import argparse
import sys

from dcifp.experiments import latency_experiment
from dcifp.metrics import latency_csv


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--windows", default="20,40,60,80,100,120,140,160")
    ap.add_argument("--capture", type=float, default=0.05)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--out")
    args = ap.parse_args()

    table: dict = {}
    for W in (int(w) for w in args.windows.split(",")):
        for app, st in latency_experiment(W, args.capture, args.trials).items():
            table.setdefault(app, {})[W] = st
    text = latency_csv(table)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
