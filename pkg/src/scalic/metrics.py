"""Quality and rate metrics: PSNR, multi-scale SSIM, BD-rate."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from scipy import interpolate

PSNR_CAP = 100.0

# standard five-scale weights of the multi-scale structural similarity metric
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def psnr(x: torch.Tensor, x_hat: torch.Tensor) -> float:
    """10*log10(1/MSE) for [0,1] images, capped at 100 dB for identical pairs."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    mse = float(torch.mean((x - x_hat) ** 2))
    if mse <= 10 ** (-PSNR_CAP / 10):
        return PSNR_CAP
    return min(10.0 * float(np.log10(1.0 / mse)), PSNR_CAP)


def _gaussian_window(size: int, sigma: float) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return (g[:, None] * g[None, :]).float()


def _ssim_parts(x: torch.Tensor, y: torch.Tensor, window: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    c = x.shape[1]
    w = window.expand(c, 1, -1, -1).to(x.dtype)
    mu_x = F.conv2d(x, w, groups=c)
    mu_y = F.conv2d(y, w, groups=c)
    mu_x2, mu_y2, mu_xy = mu_x ** 2, mu_y ** 2, mu_x * mu_y
    sigma_x2 = F.conv2d(x * x, w, groups=c) - mu_x2
    sigma_y2 = F.conv2d(y * y, w, groups=c) - mu_y2
    sigma_xy = F.conv2d(x * y, w, groups=c) - mu_xy
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    cs = (2 * sigma_xy + c2) / (sigma_x2 + sigma_y2 + c2)
    ssim = ((2 * mu_xy + c1) / (mu_x2 + mu_y2 + c1)) * cs
    return ssim.mean(), cs.mean()


def ms_ssim(x: torch.Tensor, x_hat: torch.Tensor, window_size: int = 11) -> torch.Tensor:
    """Multi-scale SSIM on [0,1] images (B,C,H,W) or (C,H,W).

    Uses as many of the five standard scales as the image size allows, with
    weights renormalized when fewer fit (small training crops).
    """
    if x.dim() == 3:
        x, x_hat = x.unsqueeze(0), x_hat.unsqueeze(0)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    min_side = min(x.shape[-2:])
    levels = 1
    while levels < len(MSSSIM_WEIGHTS) and min_side // (2 ** levels) >= window_size:
        levels += 1
    weights = torch.tensor(MSSSIM_WEIGHTS[:levels], dtype=x.dtype)
    weights = weights / weights.sum()
    window = _gaussian_window(window_size, 1.5)
    vals = []
    a, b = x, x_hat
    for lvl in range(levels):
        ssim, cs = _ssim_parts(a, b, window)
        vals.append(ssim if lvl == levels - 1 else cs)
        if lvl < levels - 1:
            a = F.avg_pool2d(a, 2)
            b = F.avg_pool2d(b, 2)
    vals = torch.stack(vals).clamp_min(1e-6)
    return torch.prod(vals ** weights)


def bd_rate(curve_a: np.ndarray, curve_b: np.ndarray) -> float:
    """Average percent rate change of curve b relative to curve a.

    Each curve is an array of (bpp, quality) rows, at least 4 points. Log-rate
    is fitted piecewise-cubic (monotone Hermite) against quality and
    integrated over the shared quality interval.
    """
    curve_a = np.asarray(curve_a, dtype=np.float64)
    curve_b = np.asarray(curve_b, dtype=np.float64)
    for name, c in (("a", curve_a), ("b", curve_b)):
        if c.ndim != 2 or c.shape[0] < 4 or c.shape[1] != 2:
            raise ValueError(f"curve {name} must be (>=4, 2), got {c.shape}")
        if (c[:, 0] <= 0).any():
            raise ValueError(f"curve {name} has non-positive rates")
    qa, ra = np.sort(curve_a[:, 1]), np.log(curve_a[np.argsort(curve_a[:, 1]), 0])
    qb, rb = np.sort(curve_b[:, 1]), np.log(curve_b[np.argsort(curve_b[:, 1]), 0])
    lo = max(qa.min(), qb.min())
    hi = min(qa.max(), qb.max())
    if hi <= lo:
        raise ValueError("quality ranges do not overlap")
    grid, step = np.linspace(lo, hi, 200, retstep=True)
    fa = interpolate.pchip_interpolate(qa, ra, grid)
    fb = interpolate.pchip_interpolate(qb, rb, grid)
    int_a = np.trapezoid(fa, dx=step)
    int_b = np.trapezoid(fb, dx=step)
    avg_log_diff = (int_b - int_a) / (hi - lo)
    return float((np.exp(avg_log_diff) - 1.0) * 100.0)
