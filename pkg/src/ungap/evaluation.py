"""Micro-averaged pixel metrics and uncertainty-quality diagnostics."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from matplotlib import colormaps
from PIL import Image
from scipy import stats

from ungap.data import to_tensor_batch, write_grid
from ungap.errors import InvalidConfigError, InvalidInputError

log = logging.getLogger(__name__)

# fixed for golden-file stability
HEATMAP_CMAP = "inferno"


@dataclass
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    threshold: float = 0.5
    undefined: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def to_csv(self, path) -> None:
        d = self.to_dict()
        d["undefined"] = ";".join(d["undefined"])
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(d))
            writer.writeheader()
            writer.writerow(d)


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _as_list(x):
    if isinstance(x, (list, tuple)):
        return [np.asarray(a) for a in x]
    return [np.asarray(x)]


def confusion_counts(pred, target, threshold=0.5):
    p = np.asarray(pred) >= threshold
    t = np.asarray(target).astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(np.count_nonzero(~p & ~t))
    return tp, fp, fn, tn


def report_from_counts(tp, fp, fn, tn, threshold=0.5) -> MetricsReport:
    undefined = []
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        undefined.append("precision")
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        undefined.append("recall")
    if precision + recall == 0:
        undefined.append("f1")
    return MetricsReport(tp, fp, fn, tn, precision, recall, f1_score(precision, recall), threshold, undefined)


def micro_metrics(pred_probs, targets, threshold: float = 0.5) -> MetricsReport:
    """Binarize at ``threshold`` and pool confusion counts over every pixel of every image."""
    if not 0.0 < threshold < 1.0:
        raise InvalidConfigError(f"threshold={threshold} must lie in (0, 1)")
    preds, tgts = _as_list(pred_probs), _as_list(targets)
    if not preds or len(preds) != len(tgts):
        raise InvalidInputError("need equally many, and at least one, predictions and targets")
    totals = np.zeros(4, dtype=np.int64)
    for p, t in zip(preds, tgts):
        if p.shape != t.shape:
            raise InvalidInputError(f"shape mismatch {p.shape} vs {t.shape}")
        if p.size == 0:
            raise InvalidInputError("empty prediction")
        totals += confusion_counts(p, t, threshold)
    return report_from_counts(*(int(v) for v in totals), threshold=threshold)


def uncertainty_noise_correlation(s_maps, noise_sigma_maps) -> float:
    """Spearman correlation between predicted variance exp(s) and true noise std.

    Returns NaN (and logs a warning) when either input is constant.
    """
    s = np.concatenate([np.ravel(a) for a in _as_list(s_maps)])
    sigma = np.concatenate([np.ravel(a) for a in _as_list(noise_sigma_maps)])
    if s.shape != sigma.shape or s.size == 0:
        raise InvalidInputError("s maps and noise maps must be non-empty and match in size")
    var = np.exp(s.astype(np.float64))
    if np.ptp(var) == 0 or np.ptp(sigma) == 0:
        log.warning("correlation undefined for constant input")
        return math.nan
    return float(stats.spearmanr(var, sigma).statistic)


def region_variance_ratio(s_maps, noise_sigma_maps) -> float:
    """Mean exp(s) over noisy pixels divided by mean exp(s) over clean pixels."""
    var = np.concatenate([np.exp(np.ravel(a).astype(np.float64)) for a in _as_list(s_maps)])
    sigma = np.concatenate([np.ravel(a) for a in _as_list(noise_sigma_maps)])
    noisy = sigma > 0
    if noisy.all() or not noisy.any():
        return math.nan
    return float(var[noisy].mean() / var[~noisy].mean())


@dataclass
class SparsificationCurve:
    fractions_removed: list
    residual_error: list

    def at(self, fraction: float) -> float:
        idx = int(np.argmin(np.abs(np.asarray(self.fractions_removed) - fraction)))
        return self.residual_error[idx]


def sparsification(pred_probs, targets, s_maps, steps: int = 10) -> SparsificationCurve:
    """Mean absolute error on the pixels kept after dropping the most uncertain ones.

    Fractions are ``i / steps`` for ``i = 0 .. steps-1``. Pixels tied in
    uncertainty at the cut are removed proportionally (the expectation over
    random tie-breaking), so a constant uncertainty map gives a flat curve.
    """
    if steps < 2:
        raise InvalidConfigError("steps must be >= 2")
    preds, tgts, ss = _as_list(pred_probs), _as_list(targets), _as_list(s_maps)
    if not preds or not (len(preds) == len(tgts) == len(ss)):
        raise InvalidInputError("need equally many, and at least one, predictions, targets and s maps")
    for p, t, s in zip(preds, tgts, ss):
        if not (p.shape == t.shape == s.shape):
            raise InvalidInputError(f"shape mismatch {p.shape} / {t.shape} / {s.shape}")
    err = np.concatenate([np.abs(p.astype(np.float64) - t).ravel() for p, t in zip(preds, tgts)])
    unc = np.concatenate([np.exp(s.astype(np.float64)).ravel() for s in ss])
    n = err.size

    # groups of equal uncertainty, most uncertain first
    values, inverse, group_n = np.unique(-unc, return_inverse=True, return_counts=True)
    group_err = np.bincount(inverse, weights=err, minlength=values.size)
    cum_n = np.concatenate([[0], np.cumsum(group_n)])
    cum_err = np.concatenate([[0.0], np.cumsum(group_err)])
    total_err = cum_err[-1]

    fractions = [i / steps for i in range(steps)]
    residual = []
    for frac in fractions:
        k = int(round(frac * n))
        g = int(np.searchsorted(cum_n, k, side="right")) - 1  # groups fully removed: 0..g-1
        removed = cum_err[g]
        partial = k - cum_n[g]
        if partial:
            removed += partial * group_err[g] / group_n[g]
        residual.append(float((total_err - removed) / (n - k)))
    return SparsificationCurve(fractions_removed=fractions, residual_error=residual)


@torch.no_grad()
def predict(model, images, batch_size: int = 8):
    """Run the model in eval mode; returns dict of numpy stacks (N x H x W)."""
    model.eval()
    out = {"seg_prob": [], "s": [], "boundary_prob": [], "y_hat_aux": []}
    for i in range(0, len(images), batch_size):
        fo = model(to_tensor_batch(images[i : i + batch_size]))
        for key in out:
            val = getattr(fo, key)
            if val is not None:
                out[key].extend(val[:, 0].numpy())
    return {k: (np.stack(v) if v else None) for k, v in out.items()}


def evaluate(model, records, threshold: float = 0.5) -> MetricsReport:
    preds = predict(model, [r.image for r in records])
    return micro_metrics(list(preds["seg_prob"]), [r.mask for r in records], threshold)


def _heatmap(grid: np.ndarray):
    lo, hi = float(grid.min()), float(grid.max())
    constant = hi == lo
    norm = np.zeros_like(grid, dtype=np.float64) if constant else (grid - lo) / (hi - lo)
    lut = (colormaps[HEATMAP_CMAP](np.linspace(0, 1, 256))[:, :3] * 255).round().astype(np.uint8)
    rgb = lut[np.clip((norm * 255).round().astype(int), 0, 255)]
    return rgb, {"min": lo, "max": hi, "constant": constant, "cmap": HEATMAP_CMAP}


def export_maps(output, out_dir, index: int = 0, prefix: str = "") -> list[Path]:
    """Write seg_prob, boundary_prob and exp(s) as heatmap PNGs plus raw float32 grids.

    The JSON sidecar of each raw grid records min/max so the PNG scale is
    recoverable. ``output`` is a ForwardOutput or a dict of N x H x W arrays.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    get = output.get if isinstance(output, dict) else lambda k: getattr(output, k)
    maps = {"seg_prob": get("seg_prob"), "boundary_prob": get("boundary_prob")}
    s = get("s")
    if s is not None:
        maps["variance"] = torch.exp(s) if torch.is_tensor(s) else np.exp(np.asarray(s, dtype=np.float64))
    written = []
    for name, val in maps.items():
        if val is None:
            continue
        if torch.is_tensor(val):
            val = val.detach().cpu().numpy()
        grid = np.asarray(val, dtype=np.float32)
        while grid.ndim > 2:
            grid = grid[index]
        rgb, meta = _heatmap(grid)
        png = out_dir / f"{prefix}{name}.png"
        Image.fromarray(rgb).save(png)
        raw = out_dir / f"{prefix}{name}.f32"
        write_grid(raw, grid, **meta)
        written += [png, raw, raw.with_suffix(".json")]
    return written
