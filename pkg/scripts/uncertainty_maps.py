"""Train rows 2 and 4 on the same scenes and export their variance maps side by side.

    python3 scripts/uncertainty_maps.py --out runs/maps --epochs 100
"""

import argparse
from pathlib import Path

import torch

from ungap.data import GeneratorConfig, derive_seed, generate_dataset, scenes_to_records, write_dataset
from ungap.evaluation import export_maps, predict
from ungap.model import ModelConfig
from ungap.training import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    torch.set_num_threads(1)

    gen = GeneratorConfig()
    records = scenes_to_records(generate_dataset(8, seed=args.seed, cfg=gen))
    test = generate_dataset(4, seed=derive_seed(args.seed, 10_000), cfg=gen)
    write_dataset(args.out / "test_scenes", test)
    tc = TrainConfig(epochs=args.epochs, seed=args.seed, learning_rate=2e-3, resample_noise=True)
    for row in (2, 4):
        cfg = ModelConfig.ablation(row, input_size=64, base_channels=16)
        model = train(cfg, tc, records).model
        preds = predict(model, [sc.image for sc in test])
        for i in range(len(test)):
            export_maps(preds, args.out / f"row{row}", index=i, prefix=f"scene_{i:04d}_")
        print(f"row {row}: maps in {args.out / f'row{row}'}")


if __name__ == "__main__":
    main()
