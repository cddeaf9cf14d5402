"""Overfit a handful of synthetic scenes and score segmentation plus uncertainty localization.

    python3 scripts/overfit.py --seeds 0 1 2 3 4 --out runs/overfit
"""

import argparse
import json
from dataclasses import asdict, replace
from pathlib import Path

import torch

from ungap.experiments import OverfitSetup, overfit_run, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()
    torch.set_num_threads(1)

    setup = OverfitSetup()
    if args.epochs is not None:
        setup = replace(setup, train=replace(setup.train, epochs=args.epochs))
    results = []
    for seed in args.seeds:
        out_dir = args.out / f"seed_{seed}" if args.out else None
        r = overfit_run(seed, setup, out_dir=out_dir)
        results.append(r)
        print(f"seed {seed}: f1 {r.f1:.3f}  rho {r.correlation:.3f}  ratio {r.variance_ratio:.2f}  {r.seconds:.0f}s")
    print("mean", {k: round(v, 3) for k, v in summarize(results).items()})
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        rows = [{k: v for k, v in asdict(r).items() if k != "run_log"} for r in results]
        (args.out / "summary.json").write_text(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
