"""Encoder-decoder with heteroscedastic head, uncertainty-prompted modulation
and a dual-branch boundary-aware detection head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from ungap.errors import InvalidConfigError, InvalidInputError
from ungap.losses import S_CLAMP

PRESETS = ("tiny", "xception_like")
UPFM_INPUTS = ("log_variance", "variance")


@dataclass
class ModelConfig:
    input_size: int = 400
    in_channels: int = 3
    base_channels: int = 16
    encoder_depth: int = 3
    preset: str = "tiny"
    enable_hm: bool = True
    enable_upfm: bool = True
    enable_bdh: bool = True
    upfm_hidden_channels: int = 16
    upfm_input: str = "log_variance"

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise InvalidConfigError(f"preset must be one of {PRESETS}, got {self.preset!r}")
        if self.upfm_input not in UPFM_INPUTS:
            raise InvalidConfigError(f"upfm_input must be one of {UPFM_INPUTS}, got {self.upfm_input!r}")
        for name in ("input_size", "in_channels", "base_channels", "upfm_hidden_channels"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be positive")
        if self.encoder_depth < 0:
            raise InvalidConfigError("encoder_depth must be >= 0")
        if self.input_size % (2**self.encoder_depth):
            raise InvalidConfigError(
                f"input_size={self.input_size} not divisible by 2**encoder_depth={2**self.encoder_depth}"
            )
        if self.enable_upfm and not self.enable_hm:
            raise InvalidConfigError("enable_upfm requires enable_hm")

    @classmethod
    def from_preset(cls, preset: str, **overrides) -> "ModelConfig":
        depth = {"tiny": 3, "xception_like": 5}[preset]
        kwargs = dict(preset=preset, encoder_depth=depth)
        kwargs.update(overrides)
        return cls(**kwargs)

    @classmethod
    def ablation(cls, row: int, **overrides) -> "ModelConfig":
        """Flag combination of ablation row 1 (baseline) .. 4 (full model)."""
        flags = {
            1: (False, False, False),
            2: (True, False, False),
            3: (True, True, False),
            4: (True, True, True),
        }[row]
        hm, upfm, bdh = flags
        return cls(**{**overrides, "enable_hm": hm, "enable_upfm": upfm, "enable_bdh": bdh})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def channels(self, stage: int) -> int:
        return self.base_channels * 2**stage


@dataclass
class ModulationParams:
    gamma: torch.Tensor
    omega: torch.Tensor


@dataclass
class ForwardOutput:
    seg_prob: torch.Tensor
    seg_logits: torch.Tensor
    f_in: torch.Tensor
    f_refined: torch.Tensor
    y_hat_aux: Optional[torch.Tensor] = None
    s: Optional[torch.Tensor] = None
    boundary_prob: Optional[torch.Tensor] = None
    boundary_logits: Optional[torch.Tensor] = None
    seg_branch_logits: Optional[torch.Tensor] = None
    modulation: Optional[ModulationParams] = None


def _norm(ch: int) -> nn.GroupNorm:
    groups = 8 if ch % 8 == 0 else 1
    return nn.GroupNorm(groups, ch)


class ConvNormAct(nn.Sequential):
    def __init__(self, cin, cout, stride=1, separable=False):
        if separable:
            conv = [
                nn.Conv2d(cin, cin, 3, stride, 1, groups=cin, bias=False),
                nn.Conv2d(cin, cout, 1, bias=False),
            ]
        else:
            conv = [nn.Conv2d(cin, cout, 3, stride, 1, bias=False)]
        super().__init__(*conv, _norm(cout), nn.ReLU(inplace=True))


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        sep = cfg.preset == "xception_like"
        stages = []
        cin = cfg.in_channels
        for k in range(cfg.encoder_depth + 1):
            cout = cfg.channels(k)
            stride = 1 if k == 0 else 2
            # the stem stays a dense conv even in the separable preset
            stages.append(
                nn.Sequential(
                    ConvNormAct(cin, cout, stride, separable=sep and k > 0),
                    ConvNormAct(cout, cout, separable=sep),
                )
            )
            cin = cout
        self.stages = nn.ModuleList(stages)

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class DecoderBlock(nn.Module):
    """Upsample (bilinear + 1x1 conv), merge the skip, then
    1x1 conv -> max pool -> ReLU -> 1x1 conv."""

    def __init__(self, cin, cskip):
        super().__init__()
        self.up_proj = nn.Conv2d(cin, cskip, 1)
        self.fuse = nn.Sequential(
            nn.Conv2d(2 * cskip, cskip, 1),
            nn.MaxPool2d(3, stride=1, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(cskip, cskip, 1),
        )
        self.norm = _norm(cskip)

    def forward(self, x, skip):
        x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
        x = self.up_proj(x)
        return self.norm(self.fuse(torch.cat([x, skip], dim=1)))


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.depth = cfg.encoder_depth
        self.blocks = nn.ModuleList(
            DecoderBlock(cfg.channels(k + 1), cfg.channels(k)) for k in reversed(range(cfg.encoder_depth))
        )

    def forward(self, feats):
        if len(feats) != self.depth + 1:
            raise InvalidInputError(f"decoder expects {self.depth + 1} feature maps, got {len(feats)}")
        x = feats[-1]
        for block, skip in zip(self.blocks, reversed(feats[:-1])):
            x = block(x, skip)
        return x


class HeteroscedasticHead(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.mean = nn.Conv2d(ch, 1, 1)
        self.log_var = nn.Conv2d(ch, 1, 1)

    def forward(self, f_in):
        y_hat = torch.sigmoid(self.mean(f_in))
        s = self.log_var(f_in).clamp(*S_CLAMP)
        return y_hat, s


class ModulationGenerator(nn.Module):
    def __init__(self, ch, hidden):
        super().__init__()
        self.ch = ch
        self.conv1 = nn.Conv2d(1, hidden, 1)
        self.conv2 = nn.Conv2d(hidden, 2 * ch, 1)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, h):
        out = self.conv2(F.relu(self.conv1(h)))
        gamma, omega = out.split(self.ch, dim=1)
        return ModulationParams(gamma=gamma, omega=omega)


def upfm_modulate(f_in: torch.Tensor, params: ModulationParams) -> torch.Tensor:
    if params.gamma.shape != f_in.shape or params.omega.shape != f_in.shape:
        raise InvalidInputError(
            f"modulation shapes {tuple(params.gamma.shape)}/{tuple(params.omega.shape)} "
            f"do not match features {tuple(f_in.shape)}"
        )
    return f_in * (1 + params.gamma) + params.omega


class Branch(nn.Sequential):
    def __init__(self, ch):
        out = nn.Conv2d(ch, 1, 3, padding=1)
        nn.init.zeros_(out.weight)
        nn.init.zeros_(out.bias)
        super().__init__(nn.Conv2d(ch, ch, 3, padding=1), nn.ReLU(inplace=True), out)


class UnGAP(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.base_channels
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        self.hm = HeteroscedasticHead(ch) if cfg.enable_hm else None
        self.upfm = ModulationGenerator(ch, cfg.upfm_hidden_channels) if cfg.enable_upfm else None
        self.seg_branch = Branch(ch)
        self.boundary_branch = Branch(ch) if cfg.enable_bdh else None

    def encode(self, image):
        if image.dim() != 4:
            raise InvalidInputError(f"expected N x C x H x W input, got shape {tuple(image.shape)}")
        k = 2**self.cfg.encoder_depth
        h, w = image.shape[-2:]
        if h % k or w % k:
            raise InvalidInputError(f"input size {h}x{w} not divisible by {k}")
        return self.encoder(image)

    def decode(self, feats):
        return self.decoder(feats)

    def heteroscedastic_head(self, f_in):
        if self.hm is None:
            raise InvalidConfigError("heteroscedastic head disabled (enable_hm=False)")
        return self.hm(f_in)

    def upfm_generate(self, s):
        if self.upfm is None:
            raise InvalidConfigError("UPFM disabled (enable_upfm=False)")
        if s.shape[1] != 1:
            raise InvalidConfigError(f"UPFM expects a 1-channel uncertainty map, got {s.shape[1]}")
        h = torch.exp(s) if self.cfg.upfm_input == "variance" else s
        return self.upfm(h)

    def boundary_head(self, f_refined):
        """Returns (boundary_logits, seg_branch_logits, fused_logits)."""
        seg = self.seg_branch(f_refined)
        if self.boundary_branch is None:
            return None, seg, seg
        boundary = self.boundary_branch(f_refined)
        return boundary, seg, boundary + seg

    def forward(self, image) -> ForwardOutput:
        f_in = self.decode(self.encode(image))
        y_hat_aux = s = params = None
        f_refined = f_in
        if self.hm is not None:
            y_hat_aux, s = self.heteroscedastic_head(f_in)
            if self.upfm is not None:
                params = self.upfm_generate(s)
                f_refined = upfm_modulate(f_in, params)
        boundary, seg_branch, fused = self.boundary_head(f_refined)
        return ForwardOutput(
            seg_prob=torch.sigmoid(fused),
            seg_logits=fused,
            f_in=f_in,
            f_refined=f_refined,
            y_hat_aux=y_hat_aux,
            s=s,
            boundary_prob=None if boundary is None else torch.sigmoid(boundary),
            boundary_logits=boundary,
            seg_branch_logits=seg_branch if boundary is not None else None,
            modulation=params,
        )


def build_model(cfg: ModelConfig, seed: int = 0) -> UnGAP:
    """Construct with a seeded, process-independent initialization."""
    state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        model = UnGAP(cfg)
    finally:
        torch.random.set_rng_state(state)
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
