"""Training loop, run log and checkpoint IO."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ungap.data import augment, boundary_from_mask, derive_seed, renoise, to_tensor_batch
from ungap.errors import InvalidConfigError, InvalidInputError, NonFiniteLossError
from ungap.evaluation import confusion_counts, report_from_counts
from ungap.losses import BetaConfig, LossWeights, beta_nll, dice_loss, total_loss
from ungap.model import ModelConfig, UnGAP, build_model

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    batch_size: int = 4
    epochs: int = 300
    beta: float = 0.5
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    train_size: int = 64
    checkpoint_every: int = 0
    augment: bool = True
    boundary_width: int = 2
    threshold: float = 0.5
    resample_noise: bool = False

    def __post_init__(self):
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        for name in ("learning_rate", "batch_size", "epochs", "train_size", "boundary_width"):
            if not getattr(self, name) > 0:
                raise InvalidConfigError(f"{name} must be positive")
        if self.checkpoint_every < 0:
            raise InvalidConfigError("checkpoint_every must be >= 0")
        BetaConfig(self.beta)

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        return cls(**{"batch_size": 32, "epochs": 1500, "train_size": 400, **overrides})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunLog:
    records: list = field(default_factory=list)

    COLUMNS = ("epoch", "L_aleatory", "L_boundary", "L_segmentation", "L_final", "train_f1")

    def append(self, **rec) -> None:
        if self.records and rec["epoch"] <= self.records[-1]["epoch"]:
            raise ValueError("epoch indices must increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.records, indent=2))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.COLUMNS)
            writer.writeheader()
            writer.writerows(self.records)

    @classmethod
    def from_json(cls, path) -> "RunLog":
        return cls(records=json.loads(Path(path).read_text()))


@dataclass
class TrainResult:
    model: UnGAP
    run_log: RunLog
    checkpoint: Optional[Path] = None


def compute_losses(out, masks, boundaries, cfg: TrainConfig):
    """Per-term losses for one batch; disabled modules contribute a constant 0."""
    zero = out.seg_prob.new_zeros(())
    if out.s is not None:
        aleatoric = beta_nll(out.y_hat_aux, masks, out.s, BetaConfig(cfg.beta))
    else:
        aleatoric = zero
    boundary = dice_loss(out.boundary_prob, boundaries) if out.boundary_prob is not None else zero
    segmentation = dice_loss(out.seg_prob, masks)
    final = total_loss(aleatoric, boundary, segmentation, cfg.loss_weights)
    return {"L_aleatory": aleatoric, "L_boundary": boundary, "L_segmentation": segmentation, "L_final": final}


def make_batch(records, idx, cfg: TrainConfig, epoch: int):
    images, masks = [], []
    for j in idx:
        rec = records[j]
        seed = derive_seed(cfg.seed, epoch * len(records) + int(j))
        img = rec.image
        if cfg.resample_noise and rec.clean is not None and rec.noise_sigma is not None:
            img = renoise(rec, seed + 1)
        msk = rec.mask
        if cfg.augment:
            img, msk = augment(img, msk, seed, cfg.train_size)
        images.append(img)
        masks.append(msk)
    # boundaries follow the augmented masks
    bounds = [boundary_from_mask(m, cfg.boundary_width) for m in masks]
    x = to_tensor_batch(images)
    y = torch.from_numpy(np.stack(masks)[:, None].astype(np.float32))
    b = torch.from_numpy(np.stack(bounds)[:, None].astype(np.float32))
    return x, y, b


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset,
    out_dir=None,
    model: Optional[UnGAP] = None,
) -> TrainResult:
    if not dataset:
        raise InvalidInputError("training dataset is empty")
    torch.manual_seed(train_cfg.seed)
    if model is None:
        model = build_model(model_cfg, seed=train_cfg.seed)
    optim = torch.optim.Adam(model.parameters(), lr=train_cfg.learning_rate, betas=(0.9, 0.999))
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    run_log = RunLog()
    last_good = None
    n = len(dataset)

    for epoch in range(1, train_cfg.epochs + 1):
        model.train()
        order = np.random.default_rng(derive_seed(train_cfg.seed, -epoch)).permutation(n)
        sums = dict.fromkeys(("L_aleatory", "L_boundary", "L_segmentation", "L_final"), 0.0)
        counts = np.zeros(4, dtype=np.int64)
        n_batches = 0
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            x, y, b = make_batch(dataset, idx, train_cfg, epoch)
            out = model(x)
            losses = compute_losses(out, y, b, train_cfg)
            for term, val in losses.items():
                if not torch.isfinite(val):
                    # no step has been taken on this batch, so current weights are the last good ones
                    if out_dir is not None:
                        last_good = save_checkpoint(model, out_dir / "last_good.pt", epoch=epoch - 1, train_cfg=train_cfg)
                    raise NonFiniteLossError(term, epoch, last_good)
            optim.zero_grad(set_to_none=True)
            losses["L_final"].backward()
            optim.step()
            for term, val in losses.items():
                sums[term] += float(val.detach())
            counts += confusion_counts(out.seg_prob.detach().numpy(), y.numpy(), train_cfg.threshold)
            n_batches += 1
        rec = {k: v / n_batches for k, v in sums.items()}
        rec["train_f1"] = report_from_counts(*counts).f1
        run_log.append(epoch=epoch, **rec)
        log.info("epoch %d %s", epoch, " ".join(f"{k}={v:.4f}" for k, v in rec.items()))

        if out_dir is not None and train_cfg.checkpoint_every and epoch % train_cfg.checkpoint_every == 0:
            last_good = save_checkpoint(model, out_dir / "checkpoint.pt", epoch=epoch, train_cfg=train_cfg)

    ckpt = None
    if out_dir is not None:
        ckpt = save_checkpoint(model, out_dir / "checkpoint.pt", epoch=train_cfg.epochs, train_cfg=train_cfg)
        run_log.to_json(out_dir / "runlog.json")
        run_log.to_csv(out_dir / "runlog.csv")
    return TrainResult(model=model, run_log=run_log, checkpoint=ckpt)


def save_checkpoint(model: UnGAP, path, epoch: int = 0, train_cfg: Optional[TrainConfig] = None) -> Path:
    """Weights via torch.save plus a JSON sidecar with config and run metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), path)
    meta = {"model_config": model.cfg.to_dict(), "epoch": epoch}
    if train_cfg is not None:
        meta.update(loss_weights=asdict(train_cfg.loss_weights), beta=train_cfg.beta, seed=train_cfg.seed)
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def load_checkpoint(path, model_cfg: Optional[ModelConfig] = None) -> tuple[UnGAP, dict]:
    path = Path(path)
    sidecar = path.with_suffix(".json")
    if not path.exists() or not sidecar.exists():
        raise FileNotFoundError(f"checkpoint {path} or its sidecar {sidecar} is missing")
    meta = json.loads(sidecar.read_text())
    stored = ModelConfig.from_dict(meta["model_config"])
    if model_cfg is not None:
        for f in fields(ModelConfig):
            want, have = getattr(model_cfg, f.name), getattr(stored, f.name)
            if want != have:
                raise InvalidConfigError(f"checkpoint config mismatch on {f.name}: checkpoint has {have}, requested {want}")
    model = UnGAP(stored)
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    except Exception as exc:
        raise InvalidInputError(f"corrupt checkpoint {path}: {exc}") from exc
    model.eval()
    return model, meta
