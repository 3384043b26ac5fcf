"""Image ingestion and the deterministic synthetic test corpus."""

from __future__ import annotations

import logging
import warnings
from pathlib import Path
from typing import Iterator

import numpy as np
import torch

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".webp"}


def load_image(path: str | Path) -> torch.Tensor:
    from PIL import Image

    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1)


def save_image(image: torch.Tensor, path: str | Path) -> None:
    from PIL import Image

    arr = (image.clamp(0, 1).permute(1, 2, 0).numpy() * 255.0).round().astype(np.uint8)
    Image.fromarray(arr).save(path)


def ingest_dataset(path: str | Path) -> Iterator[tuple[str, torch.Tensor]]:
    """Yield (name, image) pairs in deterministic sorted order.

    Unreadable files are skipped with a warning; a folder without images
    yields nothing (also warned).
    """
    root = Path(path)
    if not root.exists():
        raise FileNotFoundError(f"dataset path {root} does not exist")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
    if not files:
        warnings.warn(f"no images found under {root}")
        return
    for p in files:
        try:
            yield p.name, load_image(p)
        except Exception as exc:  # corrupt file: skip, keep going
            warnings.warn(f"skipping unreadable image {p}: {exc}")


def _gradient(rng: np.random.RandomState, size: int) -> np.ndarray:
    angle = rng.uniform(0, 2 * np.pi)
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    ramp = (ramp - ramp.min()) / (ramp.max() - ramp.min() + 1e-9)
    lo, hi = np.sort(rng.uniform(0, 1, 2))
    img = np.stack([lo + (hi - lo) * ramp] * 3)
    return img + rng.uniform(-0.02, 0.02, (3, 1, 1))


def _checkerboard(rng: np.random.RandomState, size: int) -> np.ndarray:
    period = int(rng.choice([4, 8, 16]))
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    board = ((yy // period + xx // period) % 2).astype(np.float64)
    colors = rng.uniform(0, 1, (2, 3))
    img = colors[0][:, None, None] * (1 - board) + colors[1][:, None, None] * board
    return img


def _band_noise(rng: np.random.RandomState, size: int) -> np.ndarray:
    sigma = rng.uniform(1.0, 4.0)
    noise = rng.randn(3, size, size)
    k = int(3 * sigma) * 2 + 1
    ax = np.arange(k) - k // 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    for c in range(3):
        noise[c] = np.apply_along_axis(lambda r: np.convolve(r, g, mode="same"), 1, noise[c])
        noise[c] = np.apply_along_axis(lambda r: np.convolve(r, g, mode="same"), 0, noise[c])
    noise = (noise - noise.min()) / (noise.max() - noise.min() + 1e-9)
    return 0.2 + 0.6 * noise


def synthetic_corpus(seed: int, count: int = 12, size: int = 64) -> list[torch.Tensor]:
    """Deterministic mix of gradients, checkerboards, and band-limited noise."""
    rng = np.random.RandomState(seed)
    makers = (_gradient, _checkerboard, _band_noise)
    images = []
    for i in range(count):
        img = makers[i % len(makers)](rng, size)
        images.append(torch.from_numpy(np.clip(img, 0, 1)).float())
    return images


def crop_batch(
    images: list[torch.Tensor], batch_size: int, crop: int, rng: np.random.RandomState
) -> torch.Tensor:
    """Random crops stacked into a training batch."""
    out = []
    for _ in range(batch_size):
        img = images[rng.randint(len(images))]
        h, w = img.shape[-2:]
        top = rng.randint(h - crop + 1)
        left = rng.randint(w - crop + 1)
        out.append(img[:, top:top + crop, left:left + crop])
    return torch.stack(out)
