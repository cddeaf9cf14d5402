"""Command-line entry point: generate, train, eval, infer, diagnose.

Configuration is a flat key=value file. Precedence is defaults < --config
file < command-line flags. Exit codes: 0 success, 1 usage, 2 runtime.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ungap.data import GeneratorConfig, generate_dataset, load_dataset, to_tensor_batch, write_dataset, read_image
from ungap.errors import InvalidConfigError, InvalidInputError
from ungap.evaluation import export_maps, micro_metrics, predict, sparsification
from ungap.losses import BetaConfig, LossWeights, PixelResidualBatch, attenuation_ratio, beta_nll, beta_nll_grad
from ungap.model import PRESETS, UPFM_INPUTS, ModelConfig
from ungap.training import TrainConfig, load_checkpoint, train

log = logging.getLogger("ungap")

DOCS = {
    "data": "dataset directory with images/ and masks/",
    "out": "output directory",
    "input_size": "network input side length in px",
    "base_channels": "channels of the first encoder stage",
    "encoder_depth": "number of stride-2 encoder stages (preset sets a default)",
    "preset": f"encoder preset, one of {', '.join(PRESETS)}",
    "enable_hm": "heteroscedastic head on/off",
    "enable_upfm": "uncertainty-prompted modulation on/off (needs enable_hm)",
    "enable_bdh": "boundary branch of the detection head on/off",
    "upfm_hidden_channels": "hidden width of the modulation generator",
    "upfm_input": f"signal fed to the modulation generator, one of {', '.join(UPFM_INPUTS)}",
    "learning_rate": "Adam learning rate",
    "batch_size": "mini-batch size",
    "epochs": "training epochs",
    "beta": "beta of the beta-NLL loss, in [0, 1]",
    "w1": "weight of the aleatoric loss",
    "w2": "weight of the boundary dice loss",
    "w3": "weight of the segmentation dice loss",
    "seed": "global seed for init, shuffling and augmentation",
    "train_size": "side of the random training crop",
    "checkpoint_every": "save a checkpoint every k epochs (0 = only at the end)",
    "augment": "random crop plus one of rotate / brightness-contrast / blur",
    "boundary_width": "half-width of the boundary band derived from masks",
    "threshold": "probability threshold for crack pixels",
    "resample_noise": "draw a fresh noise realization per epoch when clean renders exist",
}


@dataclass
class RunConfig:
    data: str = "data"
    out: str = "runs/default"
    input_size: int = 64
    base_channels: int = 16
    encoder_depth: int = 3
    preset: str = "tiny"
    enable_hm: bool = True
    enable_upfm: bool = True
    enable_bdh: bool = True
    upfm_hidden_channels: int = 16
    upfm_input: str = "log_variance"
    learning_rate: float = 1e-3
    batch_size: int = 4
    epochs: int = 300
    beta: float = 0.5
    w1: float = 0.87
    w2: float = 0.13
    w3: float = 0.001
    seed: int = 0
    train_size: int = 64
    checkpoint_every: int = 0
    augment: bool = True
    boundary_width: int = 2
    threshold: float = 0.5
    resample_noise: bool = True

    def __post_init__(self):
        # fail early on any invalid combination
        self.model_config()
        self.train_config()

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)} - {"loss_weights"}
        kw = {k: v for k, v in asdict(self).items() if k in names}
        return TrainConfig(loss_weights=LossWeights(self.w1, self.w2, self.w3), **kw)

    @classmethod
    def parse_value(cls, key: str, raw: str):
        types = {f.name: f.type for f in fields(cls)}
        if key not in types:
            raise InvalidConfigError(f"unknown config key {key!r}")
        kind = types[key]
        raw = raw.strip()
        try:
            if kind == "bool":
                low = raw.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(raw)
                return low in ("true", "1", "yes")
            return {"int": int, "float": float, "str": str}[kind](raw)
        except ValueError:
            raise InvalidConfigError(f"bad value for {key}: {raw!r} (expected {kind})") from None

    @classmethod
    def read_file(cls, path) -> dict:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file {path} not found")
        values = {}
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = line.split("=", 1)
            values[key.strip()] = cls.parse_value(key.strip(), raw)
        return values

    @classmethod
    def load(cls, path=None, **overrides) -> "RunConfig":
        values = cls.read_file(path) if path is not None else {}
        values.update({k: v for k, v in overrides.items() if v is not None})
        unknown = set(values) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**values)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"{k} = {str(v).lower() if isinstance(v, bool) else v}" for k, v in asdict(self).items()]
        path.write_text("\n".join(lines) + "\n")
        return path


def _keys_help() -> str:
    rows = [f"  {f.name:<22} {DOCS[f.name]} (default: {f.default})" for f in fields(RunConfig)]
    return "config keys (file syntax key=value; each is also a --flag):\n" + "\n".join(rows)


def _config_flags(p: argparse.ArgumentParser) -> None:
    """One --flag per RunConfig key, plus the ablation shorthands."""
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f.name, default=None, metavar=f.type.upper(), help=DOCS[f.name])
    for mod in ("hm", "upfm", "bdh"):
        p.add_argument(f"--disable-{mod}", dest=f"enable_{mod}", action="store_const", const="false",
                       help=f"shorthand for --enable-{mod} false")
    p.add_argument("--config", type=Path, help="key=value config file")


def _run_config(args) -> RunConfig:
    overrides = {}
    for f in fields(RunConfig):
        raw = getattr(args, f.name, None)
        if raw is not None:
            overrides[f.name] = RunConfig.parse_value(f.name, str(raw))
    if getattr(args, "preset", None) == "xception_like" and "encoder_depth" not in overrides:
        overrides["encoder_depth"] = 5
    return RunConfig.load(args.config, **overrides)


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()) and not force:
        raise InvalidConfigError(f"{path} exists and is not empty; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_generate(args) -> int:
    out = _prepare_out(Path(args.out), args.force)
    cfg = GeneratorConfig(size=args.size)
    scenes = generate_dataset(args.n, seed=args.seed, cfg=cfg)
    write_dataset(out, scenes)
    print(f"wrote {len(scenes)} scenes to {out}")
    return 0


def cmd_train(args) -> int:
    rc = _run_config(args)
    out = _prepare_out(Path(rc.out), args.force)
    rc.write(out / "config.txt")
    records = load_dataset(rc.data)
    res = train(rc.model_config(), rc.train_config(), records, out_dir=out)
    last = res.run_log[-1]
    print(f"epoch {last['epoch']} L_final {last['L_final']:.4f} train_f1 {last['train_f1']:.4f}")
    print(f"checkpoint {res.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    records = load_dataset(args.data)
    if not records:
        raise InvalidInputError(f"{args.data} holds no samples")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    preds = predict(model, [r.image for r in records])
    masks = [r.mask for r in records]
    report = micro_metrics(list(preds["seg_prob"]), masks, args.threshold)
    report.to_json(out / "metrics.json")
    report.to_csv(out / "metrics.csv")
    if preds["s"] is not None:
        curve = sparsification(list(preds["seg_prob"]), masks, list(preds["s"]))
        (out / "sparsification.json").write_text(json.dumps(asdict(curve), indent=2))
    print(f"precision {report.precision:.4f} recall {report.recall:.4f} f1 {report.f1:.4f}")
    return 0


def cmd_infer(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    path = Path(args.image)
    if not path.exists():
        raise FileNotFoundError(f"image {path} not found")
    with torch.no_grad():
        out = model(to_tensor_batch([read_image(path)]))
    for p in export_maps(out, args.out, prefix=path.stem + "_"):
        print(p)
    return 0


def cmd_diagnose(args) -> int:
    betas = [float(b) for b in args.betas.split(",")]
    s_grid = np.linspace(args.s_min, args.s_max, args.s_steps)
    print("beta  " + " ".join(f"s={s:+.2f}" for s in s_grid))
    for beta in betas:
        BetaConfig(beta)
        print(f"{beta:<5} " + " ".join(f"{attenuation_ratio(s, beta):>7.4f}" for s in s_grid))
    # autodiff vs analytic gradients on random batches
    gen = torch.Generator().manual_seed(args.seed)
    worst = 0.0
    for beta in betas:
        cfg = BetaConfig(beta)
        for _ in range(args.batches):
            b = PixelResidualBatch.random((2, 8, 8), gen)
            y_hat, s = b.y_hat.clone().requires_grad_(True), b.s.clone().requires_grad_(True)
            beta_nll(y_hat, b.y, s, cfg).backward()
            ay, as_ = beta_nll_grad(b.y_hat, b.y, b.s, cfg)
            for auto, ana in ((y_hat.grad, ay), (s.grad, as_)):
                rel = ((auto - ana).abs() / ana.abs().clamp_min(1e-12)).max().item()
                worst = max(worst, rel)
    print(f"gradient check: {args.batches * len(betas)} batches, max relative error {worst:.2e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ungap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic crack dataset")
    g.add_argument("--n", type=int, default=8)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model", epilog=_keys_help(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    _config_flags(t)
    t.add_argument("--force", action="store_true", help="allow a non-empty output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="metrics and sparsification on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--threshold", type=float, default=0.5)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="export probability and variance maps for one image")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    d = sub.add_parser("diagnose", help="gradient attenuation table and gradient check")
    d.add_argument("--betas", default="0,0.25,0.5,1")
    d.add_argument("--s-min", type=float, default=-3.0)
    d.add_argument("--s-max", type=float, default=3.0)
    d.add_argument("--s-steps", type=int, default=7)
    d.add_argument("--batches", type=int, default=20)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_diagnose)
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; map to 1
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (InvalidConfigError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, InvalidInputError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
