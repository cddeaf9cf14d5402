"""Synthetic crack scenes, dataset directory IO, boundary targets and augmentation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import cv2
import numpy as np
from PIL import Image
import torch
from scipy import ndimage

from ungap.errors import InvalidConfigError, InvalidInputError

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
AUGMENTATIONS = ("rotate", "brightness_contrast", "blur")
NOISE_CORR = 3.0  # px; spatial correlation of the injected noise


@dataclass
class GeneratorConfig:
    size: int = 64
    crack_count: tuple[int, int] = (1, 3)
    width_range: tuple[int, int] = (2, 4)
    noise_regions: int = 2
    sigma_range: tuple[float, float] = (0.0, 0.15)
    # two-level noise: background at sigma_range[0], regions at sigma_range[1];
    # otherwise each region draws its sigma uniformly from the range
    two_level: bool = True
    crack_contrast: tuple[float, float] = (0.5, 0.65)
    noise_corr: float = NOISE_CORR  # 0 gives white noise
    coverage_range: tuple[float, float] = (0.005, 0.15)

    def __post_init__(self):
        lo, hi = self.crack_count
        if lo < 1 or hi < lo:
            raise InvalidConfigError(f"bad crack_count {self.crack_count}")
        wlo, whi = self.width_range
        if wlo < 1 or whi < wlo or whi > 5:
            raise InvalidConfigError(f"width_range {self.width_range} must lie within 1..5 px")
        slo, shi = self.sigma_range
        if slo < 0 or shi < slo:
            raise InvalidConfigError(f"bad sigma_range {self.sigma_range}")
        if self.noise_regions < 0:
            raise InvalidConfigError("noise_regions must be >= 0")
        if self.size < 16:
            raise InvalidConfigError("size must be >= 16")


@dataclass
class SyntheticScene:
    image: np.ndarray  # H x W x 3, float32 in [0, 1]
    mask: np.ndarray  # H x W, uint8 {0, 1}
    noise_sigma: np.ndarray  # H x W, float32
    clean: np.ndarray  # noiseless render
    seed: int
    noise_corr: float = NOISE_CORR


@dataclass
class SampleRecord:
    image: np.ndarray
    mask: np.ndarray
    name: str = ""
    boundary: Optional[np.ndarray] = None
    noise_sigma: Optional[np.ndarray] = None
    clean: Optional[np.ndarray] = None
    noise_corr: float = NOISE_CORR

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape[:2]:
            raise InvalidInputError(
                f"{self.name or 'sample'}: image {self.image.shape[:2]} and mask {self.mask.shape[:2]} differ"
            )


def derive_seed(global_seed: int, index: int) -> int:
    digest = hashlib.sha256(f"{global_seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _background(rng, size):
    field_ = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=size / 10, mode="wrap")
    field_ /= field_.std() + 1e-12
    fine = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=1.0)
    fine /= fine.std() + 1e-12
    yy, xx = np.mgrid[0:size, 0:size] / size
    angle = rng.uniform(0, 2 * np.pi)
    illum = (np.cos(angle) * xx + np.sin(angle) * yy) - 0.5
    base = rng.uniform(0.5, 0.62)
    bg = base + 0.04 * field_ + 0.015 * fine + rng.uniform(0.05, 0.12) * illum
    return np.clip(bg, 0.3, 0.85)


def _draw_crack(rng, mask, cfg):
    size = mask.shape[0]
    pos = rng.uniform(0, size, 2)
    heading = rng.uniform(0, 2 * np.pi)
    n_seg = rng.integers(6, 12)
    step = size / 8
    width = int(rng.integers(cfg.width_range[0], cfg.width_range[1] + 1))
    for _ in range(n_seg):
        heading += rng.normal(0, 0.5)
        nxt = pos + step * np.array([np.cos(heading), np.sin(heading)])
        # widths drift by at most one pixel per segment
        width = int(np.clip(width + rng.integers(-1, 2), cfg.width_range[0], cfg.width_range[1]))
        p0 = tuple(int(round(v)) for v in pos)
        p1 = tuple(int(round(v)) for v in nxt)
        cv2.line(mask, p0, p1, 1, thickness=width, lineType=cv2.LINE_8)
        pos = nxt


def _noise_field(rng, cfg):
    size = cfg.size
    sigma = np.full((size, size), cfg.sigma_range[0], dtype=np.float32)
    for _ in range(cfg.noise_regions):
        h = int(rng.integers(size // 2, 3 * size // 4 + 1))
        w = int(rng.integers(size // 2, 3 * size // 4 + 1))
        y0 = int(rng.integers(0, size - h + 1))
        x0 = int(rng.integers(0, size - w + 1))
        if cfg.two_level:
            level = cfg.sigma_range[1]
        else:
            level = rng.uniform(*cfg.sigma_range)
        sigma[y0 : y0 + h, x0 : x0 + w] = level
    return sigma


def _unit_noise(rng, size, corr):
    """Zero-mean, unit-variance luminance noise, optionally smoothed to crack scale."""
    white = rng.standard_normal((size, size))
    if corr <= 0:
        return white
    # normalize by the analytic std of the filtered field so the marginal stays N(0, 1)
    kernel = np.zeros((size, size))
    kernel[size // 2, size // 2] = 1.0
    gain = np.sqrt((ndimage.gaussian_filter(kernel, corr, mode="wrap") ** 2).sum())
    return ndimage.gaussian_filter(white, corr, mode="wrap") / gain


def generate_scene(seed: int, cfg: GeneratorConfig = GeneratorConfig(), max_tries: int = 50) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    size = cfg.size
    bg = _background(rng, size)
    lo_cov, hi_cov = cfg.coverage_range
    for _ in range(max_tries):
        mask = np.zeros((size, size), dtype=np.uint8)
        for _ in range(int(rng.integers(cfg.crack_count[0], cfg.crack_count[1] + 1))):
            _draw_crack(rng, mask, cfg)
        if lo_cov <= mask.mean() <= hi_cov:
            break
    else:
        raise InvalidConfigError(f"could not reach mask coverage {cfg.coverage_range} in {max_tries} tries")

    contrast = rng.uniform(*cfg.crack_contrast)
    # soft edge so the crack is darker than its surroundings but not a flat cutout
    soft = ndimage.gaussian_filter(mask.astype(np.float64), 0.5)
    gray = bg * (1.0 - contrast * np.maximum(soft, mask))
    tint = rng.uniform(0.95, 1.05, 3)
    clean = np.clip(gray[..., None] * tint[None, None, :], 0.0, 1.0)

    sigma = _noise_field(rng, cfg)
    noise = (_unit_noise(rng, size, cfg.noise_corr) * sigma)[..., None]
    image = np.clip(clean + noise, 0.0, 1.0)
    return SyntheticScene(
        image=image.astype(np.float32),
        mask=mask,
        noise_sigma=sigma,
        clean=clean.astype(np.float32),
        seed=seed,
        noise_corr=cfg.noise_corr,
    )


def generate_dataset(n: int, seed: int = 0, cfg: GeneratorConfig = GeneratorConfig()) -> list[SyntheticScene]:
    return [generate_scene(derive_seed(seed, i), cfg) for i in range(n)]


def scenes_to_records(scenes) -> list[SampleRecord]:
    return [
        SampleRecord(image=sc.image, mask=sc.mask, name=f"scene_{i:04d}", noise_sigma=sc.noise_sigma, clean=sc.clean, noise_corr=sc.noise_corr)
        for i, sc in enumerate(scenes)
    ]


def renoise(record: SampleRecord, seed: int) -> np.ndarray:
    """A fresh noise realization of a synthetic record's noiseless render."""
    rng = np.random.default_rng(seed)
    noise = _unit_noise(rng, record.clean.shape[0], record.noise_corr) * record.noise_sigma
    return np.clip(record.clean + noise[..., None], 0.0, 1.0).astype(np.float32)


def _check_binary(mask):
    if not np.isin(np.unique(mask), (0, 1)).all():
        raise InvalidInputError("mask must be binary (values in {0, 1})")


def boundary_from_mask(mask: np.ndarray, width: int = 2) -> np.ndarray:
    """Morphological gradient: dilation XOR erosion with a (2*width+1) square."""
    mask = np.asarray(mask)
    _check_binary(mask)
    if width < 1:
        raise InvalidConfigError("boundary width must be >= 1")
    m = mask.astype(bool)
    st = np.ones((2 * width + 1, 2 * width + 1), dtype=bool)
    dil = ndimage.binary_dilation(m, structure=st)
    # pixels outside the frame count as background for erosion
    ero = ndimage.binary_erosion(m, structure=st, border_value=0)
    return (dil ^ ero).astype(np.uint8)


def augment(
    image: np.ndarray,
    mask: np.ndarray,
    seed: int,
    train_size: int,
    choice: Optional[str] = None,
    max_angle: float = 30.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Random crop to ``train_size`` then one of rotate / brightness-contrast / blur.

    ``choice`` pins the augmentation instead of drawing it.
    """
    rng = np.random.default_rng(seed)
    h, w = mask.shape
    pad_h, pad_w = max(0, train_size - h), max(0, train_size - w)
    if pad_h or pad_w:
        image = np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)), mode="reflect")
        mask = np.pad(mask, ((0, pad_h), (0, pad_w)), mode="reflect")
        h, w = mask.shape
    y0 = int(rng.integers(0, h - train_size + 1))
    x0 = int(rng.integers(0, w - train_size + 1))
    image = image[y0 : y0 + train_size, x0 : x0 + train_size]
    mask = mask[y0 : y0 + train_size, x0 : x0 + train_size]

    op = AUGMENTATIONS[int(rng.integers(0, 3))] if choice is None else choice
    if op == "rotate":
        angle = rng.uniform(-max_angle, max_angle)
        if angle != 0.0:
            image = ndimage.rotate(image, angle, axes=(1, 0), reshape=False, order=1, mode="reflect")
            mask = ndimage.rotate(mask, angle, axes=(1, 0), reshape=False, order=0, mode="reflect")
    elif op == "brightness_contrast":
        alpha = rng.uniform(0.8, 1.2)
        beta = rng.uniform(-0.1, 0.1)
        mean = image.mean()
        image = (image - mean) * alpha + mean + beta
    elif op == "blur":
        sigma = rng.uniform(0.5, 1.2)
        image = ndimage.gaussian_filter(image, sigma=(sigma, sigma, 0))
    else:
        raise InvalidConfigError(f"unknown augmentation {op!r}")
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return np.ascontiguousarray(image), np.ascontiguousarray(mask.astype(np.uint8))


# --- dataset directory layout -------------------------------------------------


def read_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr


def _read_mask(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr >= 127).astype(np.uint8)


def write_grid(path: Path, grid: np.ndarray, **meta) -> None:
    """Raw little-endian float32 grid plus a JSON sidecar with its shape."""
    grid = np.ascontiguousarray(grid, dtype="<f4")
    path = Path(path)
    path.write_bytes(grid.tobytes())
    sidecar = {"shape": list(grid.shape), "dtype": "float32", **meta}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def read_grid(path: Path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    return np.frombuffer(path.read_bytes(), dtype="<f4").reshape(meta["shape"]).copy()


def _stem_map(directory: Path) -> dict[str, Path]:
    if not directory.is_dir():
        return {}
    return {p.stem: p for p in sorted(directory.iterdir()) if p.suffix.lower() in IMAGE_EXTS}


def load_dataset(root) -> list[SampleRecord]:
    root = Path(root)
    images = _stem_map(root / "images")
    masks = _stem_map(root / "masks")
    if not (root / "images").is_dir() or not (root / "masks").is_dir():
        raise FileNotFoundError(f"{root} must contain images/ and masks/")
    for stem in sorted(set(images) ^ set(masks)):
        where = "images/" if stem in images else "masks/"
        orphan = images.get(stem) or masks.get(stem)
        raise InvalidInputError(f"unmatched file {orphan} (only present in {where})")
    boundaries = _stem_map(root / "boundaries")
    records = []
    for stem in sorted(images):
        img = read_image(images[stem])
        msk = _read_mask(masks[stem])
        if img.shape[:2] != msk.shape:
            raise InvalidInputError(
                f"size mismatch: {images[stem]} is {img.shape[1]}x{img.shape[0]}, "
                f"{masks[stem]} is {msk.shape[1]}x{msk.shape[0]}"
            )
        boundary = _read_mask(boundaries[stem]) if stem in boundaries else None
        sigma_path = root / "noise_sigma" / f"{stem}.f32"
        sigma, corr = None, 1.0
        if sigma_path.exists():
            sigma = read_grid(sigma_path)
            corr = json.loads(sigma_path.with_suffix(".json").read_text()).get("noise_corr", NOISE_CORR)
        clean_path = root / "clean" / f"{stem}.f32"
        clean = read_grid(clean_path) if clean_path.exists() else None
        records.append(
            SampleRecord(image=img, mask=msk, name=stem, boundary=boundary, noise_sigma=sigma, clean=clean, noise_corr=corr)
        )
    return records


def write_dataset(root, scenes, names=None) -> None:
    root = Path(root)
    for sub in ("images", "masks", "boundaries", "noise_sigma", "clean"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i, sc in enumerate(scenes):
        name = names[i] if names else f"scene_{i:04d}"
        img8 = np.round(sc.image * 255).astype(np.uint8)
        Image.fromarray(img8).save(root / "images" / f"{name}.png")
        Image.fromarray(sc.mask * 255).save(root / "masks" / f"{name}.png")
        Image.fromarray(boundary_from_mask(sc.mask) * 255).save(root / "boundaries" / f"{name}.png")
        write_grid(root / "noise_sigma" / f"{name}.f32", sc.noise_sigma, seed=int(sc.seed), noise_corr=sc.noise_corr)
        # noiseless render, so training can draw fresh noise realizations
        write_grid(root / "clean" / f"{name}.f32", sc.clean)


def to_tensor_batch(images) -> torch.Tensor:
    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()
