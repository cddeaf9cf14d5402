"""Heteroscedastic losses: Gaussian NLL, beta-NLL, dice, and the weighted total.

All reductions are the mean over every pixel of every image (N * P terms),
so loss magnitudes do not depend on crop size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from ungap.errors import InvalidConfigError, InvalidInputError

S_CLAMP = (-7.0, 7.0)


@dataclass(frozen=True)
class LossWeights:
    w1: float = 0.87  # aleatoric
    w2: float = 0.13  # boundary
    w3: float = 0.001  # segmentation

    def __post_init__(self):
        for name in ("w1", "w2", "w3"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise InvalidConfigError(f"loss weight {name}={value} must be finite and >= 0")


@dataclass(frozen=True)
class BetaConfig:
    beta: float = 0.5
    s_clamp: tuple[float, float] = S_CLAMP

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidConfigError(f"beta={self.beta} outside [0, 1]")
        lo, hi = self.s_clamp
        if not lo < hi:
            raise InvalidConfigError(f"s_clamp {self.s_clamp} must satisfy min < max")


@dataclass
class PixelResidualBatch:
    """Labels, predicted means and log-variances for N images of P pixels each."""

    y: torch.Tensor
    y_hat: torch.Tensor
    s: torch.Tensor

    def __post_init__(self):
        _check_shapes(self.y_hat, self.y, self.s)

    @property
    def N(self) -> int:
        return self.y.shape[0] if self.y.dim() > 0 else 1

    @property
    def P(self) -> int:
        return self.y.numel() // self.N

    @classmethod
    def random(cls, shape, generator=None, s_range=(-4.0, 4.0), dtype=torch.float64):
        """Binary labels, uniform probabilities and uniform log-variances."""
        y = (torch.rand(shape, generator=generator, dtype=dtype) > 0.5).to(dtype)
        y_hat = torch.rand(shape, generator=generator, dtype=dtype)
        lo, hi = s_range
        s = lo + (hi - lo) * torch.rand(shape, generator=generator, dtype=dtype)
        return cls(y=y, y_hat=y_hat, s=s)


def _check_shapes(*tensors):
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise InvalidInputError(f"shape mismatch: {tuple(shape)} vs {tuple(t.shape)}")


def _nll_terms(y_hat, y, s):
    return 0.5 * torch.exp(-s) * (y - y_hat) ** 2 + 0.5 * s


def standard_nll(y_hat: torch.Tensor, y: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
    """Gaussian negative log-likelihood without the constant, averaged over pixels."""
    _check_shapes(y_hat, y, s)
    return _nll_terms(y_hat, y, s).mean()


def beta_nll(
    y_hat: torch.Tensor, y: torch.Tensor, s: torch.Tensor, cfg: BetaConfig = BetaConfig()
) -> torch.Tensor:
    """NLL re-weighted per pixel by the detached factor exp(beta * s).

    ``s`` is clamped to ``cfg.s_clamp`` first. With beta=0 this is exactly
    :func:`standard_nll`.
    """
    _check_shapes(y_hat, y, s)
    s = s.clamp(*cfg.s_clamp)
    terms = _nll_terms(y_hat, y, s)
    if cfg.beta == 0.0:
        return terms.mean()
    weight = torch.exp(cfg.beta * s).detach()
    return (weight * terms).mean()


@torch.no_grad()
def beta_nll_grad(
    y_hat: torch.Tensor, y: torch.Tensor, s: torch.Tensor, cfg: BetaConfig = BetaConfig()
) -> tuple[torch.Tensor, torch.Tensor]:
    """Closed-form gradients of :func:`beta_nll` w.r.t. ``y_hat`` and ``s``.

    Valid where ``s`` lies strictly inside the clamp range.
    """
    _check_shapes(y_hat, y, s)
    n_terms = y.numel()
    beta = cfg.beta
    grad_y_hat = torch.exp((beta - 1.0) * s) * (y_hat - y) / n_terms
    grad_s = torch.exp(beta * s) * 0.5 * (1.0 - torch.exp(-s) * (y - y_hat) ** 2) / n_terms
    return grad_y_hat, grad_s


def attenuation_ratio(s: float, beta: float) -> float:
    """Scale of the mean-prediction gradient at log-variance s relative to s=0."""
    return math.exp((beta - 1.0) * s)


def dice_loss(pred: torch.Tensor, target: torch.Tensor, eps: float = 1.0) -> torch.Tensor:
    """Soft dice loss with sums taken over the whole batch."""
    _check_shapes(pred, target)
    if eps <= 0:
        raise InvalidConfigError(f"dice eps={eps} must be > 0")
    inter = (pred * target).sum()
    denom = pred.sum() + target.sum()
    return 1.0 - (2.0 * inter + eps) / (denom + eps)


def total_loss(aleatoric, boundary, segmentation, w: LossWeights = LossWeights()):
    return w.w1 * aleatoric + w.w2 * boundary + w.w3 * segmentation
