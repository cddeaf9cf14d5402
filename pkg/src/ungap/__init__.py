"""Uncertainty-prompted crack segmentation."""

from ungap.losses import BetaConfig, LossWeights, beta_nll, dice_loss, standard_nll, total_loss
from ungap.model import ForwardOutput, ModelConfig, UnGAP

__all__ = [
    "BetaConfig",
    "LossWeights",
    "beta_nll",
    "dice_loss",
    "standard_nll",
    "total_loss",
    "ForwardOutput",
    "ModelConfig",
    "UnGAP",
]

__version__ = "0.1.0"
