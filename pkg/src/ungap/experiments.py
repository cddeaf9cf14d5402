"""Desk-scale experiments shared by scripts/ and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from ungap.data import GeneratorConfig, derive_seed, generate_dataset, scenes_to_records
from ungap.evaluation import (
    micro_metrics,
    predict,
    region_variance_ratio,
    sparsification,
    uncertainty_noise_correlation,
)
from ungap.model import ModelConfig
from ungap.training import TrainConfig, train


@dataclass
class OverfitSetup:
    n_scenes: int = 8
    gen: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: ModelConfig = field(default_factory=lambda: ModelConfig(input_size=64, base_channels=16, encoder_depth=3))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=2e-3, epochs=300, resample_noise=True))


@dataclass
class OverfitResult:
    seed: int
    f1: float
    correlation: float
    variance_ratio: float
    seconds: float
    run_log: list


def overfit_run(seed: int, setup: OverfitSetup = OverfitSetup(), out_dir=None) -> OverfitResult:
    """Train on a handful of scenes, then score segmentation and uncertainty on them."""
    scenes = generate_dataset(setup.n_scenes, seed=seed, cfg=setup.gen)
    records = scenes_to_records(scenes)
    start = time.perf_counter()
    res = train(setup.model, replace(setup.train, seed=seed), records, out_dir=out_dir)
    seconds = time.perf_counter() - start
    preds = predict(res.model, [r.image for r in records])
    sigma = [sc.noise_sigma for sc in scenes]
    return OverfitResult(
        seed=seed,
        f1=micro_metrics(list(preds["seg_prob"]), [sc.mask for sc in scenes], setup.train.threshold).f1,
        correlation=uncertainty_noise_correlation(list(preds["s"]), sigma),
        variance_ratio=region_variance_ratio(list(preds["s"]), sigma),
        seconds=seconds,
        run_log=res.run_log.records,
    )


def ablation_run(seed: int = 0, epochs: int = 5, n_train: int = 8, n_test: int = 8, removal: float = 0.2,
                 base: ModelConfig = None, lr: float = 1e-3, batch_size: int = 4) -> dict:
    """Train the four ablation rows and score sparsification on a held-out split.

    Returns ``{row: {"run_log": ..., "f1": ..., "sparsification": residual or None}}``.
    """
    base = base or ModelConfig(input_size=64, base_channels=16, encoder_depth=3)
    gen = GeneratorConfig()
    train_recs = scenes_to_records(generate_dataset(n_train, seed=seed, cfg=gen))
    test_scenes = generate_dataset(n_test, seed=derive_seed(seed, 10_000), cfg=gen)
    images, masks = [sc.image for sc in test_scenes], [sc.mask for sc in test_scenes]
    out = {}
    for row in (1, 2, 3, 4):
        cfg = ModelConfig.ablation(row, **{k: v for k, v in base.to_dict().items() if not k.startswith("enable_")})
        tc = TrainConfig(epochs=epochs, seed=seed, learning_rate=lr, batch_size=batch_size, resample_noise=True)
        res = train(cfg, tc, train_recs)
        preds = predict(res.model, images)
        entry = {
            "run_log": res.run_log.records,
            "f1": micro_metrics(list(preds["seg_prob"]), masks).f1,
            "sparsification": None,
        }
        if preds["s"] is not None:
            curve = sparsification(list(preds["seg_prob"]), masks, list(preds["s"]), steps=int(round(1 / removal)) * 5)
            entry["sparsification"] = curve.at(removal)
            entry["curve"] = curve
        out[row] = entry
    return out


def summarize(results) -> dict:
    arr = lambda key: np.array([getattr(r, key) for r in results])
    return {k: float(np.mean(arr(k))) for k in ("f1", "correlation", "variance_ratio", "seconds")}
