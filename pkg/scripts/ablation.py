"""Train the four ablation rows briefly and compare held-out sparsification.

    python3 scripts/ablation.py --seeds 0 1 2 --epochs 5
"""

import argparse

import torch

from ungap.experiments import ablation_run

ROWS = {1: "baseline", 2: "+HM", 3: "+HM+UPFM", 4: "+HM+UPFM+BDH"}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--batch-size", type=int, default=1)
    ap.add_argument("--lr", type=float, default=1e-3)
    args = ap.parse_args()
    torch.set_num_threads(1)

    for seed in args.seeds:
        res = ablation_run(seed, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr)
        print(f"seed {seed}")
        for row, entry in res.items():
            sp = entry["sparsification"]
            sp = "   -  " if sp is None else f"{sp:.4f}"
            print(f"  {row} {ROWS[row]:<14} f1 {entry['f1']:.3f}  residual@20% {sp}")


if __name__ == "__main__":
    main()
