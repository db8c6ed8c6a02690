"""Four-app run (YouTube, Netflix, YTMusic, WhatsApp) at 10% capture, W=100.

Reports the validation accuracy per epoch and a per-app table on a freshly
generated held-out set.
"""
from __future__ import annotations

import argparse

from dcifp.experiments import held_out_eval, testbed_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--per-class", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args()

    bundle = testbed_experiment(per_class=args.per_class, seed=args.seed)
    m = bundle.train_meta
    for i, (loss, acc) in enumerate(zip(m["loss_curve"], m["val_accuracy"]), 1):
        print(f"epoch {i:2d}  loss {loss:.4f}  val_acc {acc:.3f}")
    print(f"kept epoch {m['selected_epoch']} of {m['epochs']}; {m['n_val']} validation windows\n")
    print(held_out_eval(bundle, 0.10, per_class=300, seed=args.seed + 100).to_table())


if __name__ == "__main__":
    main()
