"""Window-size sweep over the eight apps at 5% capture.

Prints the precision/recall/F1/accuracy table, then the per-app report and
row-normalised confusion matrix for the largest window. With --out-dir the
summary CSV and one key=value report per W are written as well.
"""
from __future__ import annotations

import argparse
import logging
import time
from pathlib import Path

import numpy as np

from dcifp.experiments import SWEEP_WINDOWS, sweep_experiment
from dcifp.metrics import normalized_confusion, sweep_csv, sweep_table


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--capture", type=float, default=0.05)
    ap.add_argument("--at-100", type=int, default=1000, help="train windows per class at W<=100")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out-dir", type=Path)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    t0 = time.perf_counter()
    res = sweep_experiment(SWEEP_WINDOWS, args.capture, args.at_100, seed=args.seed,
                           progress=lambda W, r: print(f"W={W} accuracy {r.accuracy:.3f} "
                                                       f"({time.perf_counter() - t0:.0f} s)"))
    print()
    print(sweep_table(res.results))
    W, last = res.results[-1]
    print(f"W={W} per-app report")
    print(last.to_table())
    cm = normalized_confusion(last)
    w = max(len(c) for c in last.class_order)
    print(" " * w + "  " + " ".join(f"{c[:6]:>6}" for c in last.class_order))
    for c, row in zip(last.class_order, cm):
        print(f"{c:<{w}}  " + " ".join(f"{v:6.3f}" for v in row))
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "summary.csv").write_text(sweep_csv(res.results))
        for W, r in res.results:
            (args.out_dir / f"report_W{W}.txt").write_text(r.to_kv())
        np.savetxt(args.out_dir / f"confusion_W{W}.csv", cm, delimiter=",", fmt="%.4f")


if __name__ == "__main__":
    main()
