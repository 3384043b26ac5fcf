"""Probability models for the quantized latents and their rate estimates.

The hyper-latent uses a per-channel learned monotone CDF; the main latent is
modeled as a conditional Gaussian whose mean and scale come from fusing the
hyper-synthesis features (stage label -1, i.e. available before any latent
symbol) with masked-context features through a stack of dynamic 1x1 layers.
Quantized 16-bit CDF tables over the clamped alphabet are the contract handed
to the range coder; tail mass folds into the extreme bins so the tables are
exactly normalized.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .structure_inter import InterChoice
from .structure_intra import AUX_INDEX, TopologyField, dynamic_masked_conv

LIKELIHOOD_FLOOR = 1e-9
CDF_PRECISION = 16


def quantize(y: torch.Tensor, mode: str, rng: Optional[torch.Generator] = None) -> torch.Tensor:
    """Additive-noise proxy during training, straight-through rounding for coding."""
    if mode == "noise":
        noise = torch.rand(y.shape, generator=rng, dtype=y.dtype, device=y.device) - 0.5
        return y + noise
    if mode == "round":
        return y + (torch.round(y) - y).detach()
    raise ValueError(f"mode must be 'noise' or 'round', got {mode!r}")


def _std_normal_cdf(x: torch.Tensor) -> torch.Tensor:
    return 0.5 * torch.erfc(-x * (2 ** -0.5))


def gaussian_bin_mass(
    v: torch.Tensor,
    mean: torch.Tensor,
    scale: torch.Tensor,
    alphabet: Optional[tuple[int, int]] = None,
) -> torch.Tensor:
    """Probability mass of the unit-width bin centered at v under N(mean, scale).

    With ``alphabet`` the extreme bins absorb the tails, matching the clamped
    symbol distribution the coder tables encode.
    """
    centered = v - mean
    upper = _std_normal_cdf((centered + 0.5) / scale)
    lower = _std_normal_cdf((centered - 0.5) / scale)
    if alphabet is not None:
        amin, amax = alphabet
        upper = torch.where(v >= amax, torch.ones_like(upper), upper)
        lower = torch.where(v <= amin, torch.zeros_like(lower), lower)
    return upper - lower


def gaussian_rate_bits(
    v: torch.Tensor,
    mean: torch.Tensor,
    scale: torch.Tensor,
    alphabet: Optional[tuple[int, int]] = None,
) -> torch.Tensor:
    """Total bits to code integer tensor v under per-element Gaussians.

    With ``alphabet`` the mass floors at 2^-precision, mirroring the coder
    tables' guaranteed minimum frequency (no symbol costs more than 16 bits).
    """
    floor = 2.0 ** -CDF_PRECISION if alphabet is not None else LIKELIHOOD_FLOOR
    mass = gaussian_bin_mass(v, mean, scale, alphabet).clamp_min(floor)
    return -torch.log2(mass).sum()


class FactorizedPrior(nn.Module):
    """Per-channel learned CDF for the hyper-latent (4 internal layers)."""

    def __init__(self, channels: int, hidden: tuple[int, ...] = (3, 3, 3)):
        super().__init__()
        self.channels = channels
        dims = (1,) + tuple(hidden) + (1,)
        self._num_layers = len(dims) - 1
        scale = self._num_layers ** -1.0
        for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            init = math.log(math.expm1(1.0 / scale / dout))
            self.register_parameter(f"matrix{i}", nn.Parameter(torch.full((channels, dout, din), init)))
            self.register_parameter(f"bias{i}", nn.Parameter(torch.empty(channels, dout, 1).uniform_(-0.5, 0.5)))
            if i < self._num_layers - 1:
                self.register_parameter(f"factor{i}", nn.Parameter(torch.zeros(channels, dout, 1)))

    def _logits(self, x: torch.Tensor) -> torch.Tensor:
        # x: (C, 1, N) -> (C, 1, N) pre-sigmoid CDF logits, monotone in x
        for i in range(self._num_layers):
            matrix = F.softplus(getattr(self, f"matrix{i}"))
            x = torch.bmm(matrix, x) + getattr(self, f"bias{i}")
            if i < self._num_layers - 1:
                factor = torch.tanh(getattr(self, f"factor{i}"))
                x = x + factor * torch.tanh(x)
        return x

    def bin_mass(self, v: torch.Tensor, alphabet: Optional[tuple[int, int]] = None) -> torch.Tensor:
        """Mass of unit bins centered at v; v shaped (B, C, H, W).

        With ``alphabet`` the extreme bins absorb the tails, as in the coder
        tables built from this prior.
        """
        b, c, h, w = v.shape
        flat = v.permute(1, 0, 2, 3).reshape(c, 1, -1)
        upper = torch.sigmoid(self._logits(flat + 0.5))
        lower = torch.sigmoid(self._logits(flat - 0.5))
        if alphabet is not None:
            amin, amax = alphabet
            upper = torch.where(flat >= amax, torch.ones_like(upper), upper)
            lower = torch.where(flat <= amin, torch.zeros_like(lower), lower)
        mass = (upper - lower).reshape(c, b, h, w).permute(1, 0, 2, 3)
        return mass

    def rate_bits(self, v: torch.Tensor, alphabet: Optional[tuple[int, int]] = None) -> torch.Tensor:
        floor = 2.0 ** -CDF_PRECISION if alphabet is not None else LIKELIHOOD_FLOOR
        return -torch.log2(self.bin_mass(v, alphabet).clamp_min(floor)).sum()

    def cdf_points(self, grid: torch.Tensor) -> torch.Tensor:
        """CDF evaluated per channel on a 1-D grid; (C, len(grid))."""
        pts = grid.view(1, 1, -1).repeat(self.channels, 1, 1)
        return torch.sigmoid(self._logits(pts)).squeeze(1)


class ContextModel(nn.Module):
    """Single dynamic masked conv over raw latent symbols (strict ordering)."""

    def __init__(self, latent_channels: int, kernel: int = 5):
        super().__init__()
        self.kernel = kernel
        self.weight = nn.Parameter(torch.empty(2 * latent_channels, latent_channels, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(2 * latent_channels))
        nn.init.kaiming_normal_(self.weight)

    def forward(self, y_hat: torch.Tensor, topo: TopologyField) -> torch.Tensor:
        field = topo.field.unsqueeze(0).expand(y_hat.shape[0], -1, -1, -1)
        return dynamic_masked_conv(
            y_hat, self.weight, self.bias, in_index=field, out_index=field, strict=True
        )


class MergeNetwork(nn.Module):
    """Three dynamic 1x1 layers fusing hyper features with context features.

    Hyper rows carry stage label -1 (always visible); context rows carry the
    topology labels. Hidden features are themselves causal, so interior layers
    mask non-strictly. Hidden widths are slimmable.
    """

    def __init__(self, latent_channels: int, hidden_options: tuple[tuple[int, int], ...]):
        super().__init__()
        self.latent_channels = latent_channels
        self.hidden_options = tuple(hidden_options)
        h1_max = max(h[0] for h in hidden_options)
        h2_max = max(h[1] for h in hidden_options)
        m = latent_channels
        self.w1 = nn.Parameter(torch.empty(h1_max, 4 * m, 1, 1))
        self.b1 = nn.Parameter(torch.zeros(h1_max))
        self.w2 = nn.Parameter(torch.empty(h2_max, h1_max, 1, 1))
        self.b2 = nn.Parameter(torch.zeros(h2_max))
        self.w3 = nn.Parameter(torch.empty(2 * m, h2_max, 1, 1))
        self.b3 = nn.Parameter(torch.zeros(2 * m))
        for w in (self.w1, self.w2, self.w3):
            nn.init.kaiming_normal_(w)

    def forward(
        self,
        hyper_feats: torch.Tensor,
        ctx_feats: torch.Tensor,
        topo: TopologyField,
        variant: int,
    ) -> torch.Tensor:
        h1, h2 = self.hidden_options[variant]
        b = hyper_feats.shape[0]
        g = topo.c_groups
        field = topo.field.unsqueeze(0).expand(b, -1, -1, -1)
        aux_row = torch.full_like(field[:, :1], AUX_INDEX)
        # input rows: row 0 = hyper (label -1), rows 1..G = topology labels
        in_index = torch.cat([aux_row, field], dim=1)
        n_hyper = hyper_feats.shape[1]
        n_ctx = ctx_feats.shape[1]
        in_groups = torch.cat(
            [torch.zeros(n_hyper, dtype=torch.long), 1 + (torch.arange(n_ctx) % g)]
        )
        x = torch.cat([hyper_feats, ctx_feats], dim=1)
        x = dynamic_masked_conv(
            x, self.w1[:h1], self.b1[:h1], in_index=in_index, out_index=field,
            in_groups=in_groups, strict=False,
        )
        x = F.leaky_relu(x)
        x = dynamic_masked_conv(
            x, self.w2[:h2, :h1], self.b2[:h2], in_index=field, out_index=field, strict=False
        )
        x = F.leaky_relu(x)
        x = dynamic_masked_conv(
            x, self.w3[:, :h2], self.b3, in_index=field, out_index=field, strict=False
        )
        return x


class ConditionalGaussian(nn.Module):
    """Context + merge path producing the per-node Gaussian parameters."""

    def __init__(
        self,
        latent_channels: int,
        merge_hidden_options: tuple[tuple[int, int], ...],
        context_kernel: int = 5,
        sigma_min: float = 0.11,
    ):
        super().__init__()
        self.sigma_min = sigma_min
        self.context = ContextModel(latent_channels, kernel=context_kernel)
        self.merge = MergeNetwork(latent_channels, merge_hidden_options)

    def forward(
        self,
        hyper_feats: torch.Tensor,
        y_hat: torch.Tensor,
        topo: TopologyField,
        merge_choice: InterChoice,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        if hyper_feats.shape[-2:] != y_hat.shape[-2:]:
            raise ValueError(
                f"hyper features {tuple(hyper_feats.shape)} do not align with latent {tuple(y_hat.shape)}"
            )
        ctx = self.context(y_hat, topo)
        w = merge_choice.weights
        if not w.requires_grad and torch.count_nonzero(w) == 1:
            out = self.merge(hyper_feats, ctx, topo, merge_choice.index)
        else:
            outs = [self.merge(hyper_feats, ctx, topo, i) for i in range(len(self.merge.hidden_options))]
            out = sum(wn * o for wn, o in zip(w, outs))
        mean, scale_raw = out.chunk(2, dim=1)
        scale = self.sigma_min + F.softplus(scale_raw)
        return mean, scale


def quantize_pmf_to_freqs(pmf: np.ndarray, precision: int = CDF_PRECISION) -> np.ndarray:
    """Turn a pmf into integer frequencies summing to exactly 2**precision.

    Every symbol keeps frequency >= 1 so the coder can represent it; the
    rounding remainder lands on the largest bucket.
    """
    total = 1 << precision
    n = pmf.shape[-1]
    pmf = np.maximum(pmf, 0.0)
    norm = pmf.sum(axis=-1, keepdims=True)
    norm[norm == 0] = 1.0
    scaled = pmf / norm * (total - n)
    freqs = np.floor(scaled).astype(np.int64) + 1
    remainder = total - freqs.sum(axis=-1)
    idx = freqs.argmax(axis=-1)
    if freqs.ndim == 1:
        freqs[idx] += remainder
    else:
        np.put_along_axis(
            freqs, idx[..., None], np.take_along_axis(freqs, idx[..., None], -1) + remainder[..., None], -1
        )
    if (freqs <= 0).any():
        raise ValueError("frequency quantization produced a non-positive count")
    return freqs


def gaussian_freq_table(
    mean: np.ndarray, scale: np.ndarray, alphabet_min: int, alphabet_max: int
) -> np.ndarray:
    """Per-node quantized frequencies over the clamped integer alphabet.

    mean/scale are flat float arrays of equal length N; returns (N, A) int64.
    Tail mass beyond the alphabet folds into the extreme bins.
    """
    symbols = np.arange(alphabet_min, alphabet_max + 1, dtype=np.float64)
    z = (symbols[None, :] - mean[:, None]) / scale[:, None]
    from scipy.special import ndtr

    upper = ndtr(z + 0.5 / scale[:, None])
    lower = ndtr(z - 0.5 / scale[:, None])
    pmf = upper - lower
    pmf[:, 0] += lower[:, 0]
    pmf[:, -1] += 1.0 - upper[:, -1]
    return quantize_pmf_to_freqs(pmf)


def factorized_freq_table(
    prior: FactorizedPrior, alphabet_min: int, alphabet_max: int
) -> np.ndarray:
    """Per-channel quantized frequencies from the learned CDF; (C, A) int64."""
    edges = torch.arange(alphabet_min - 0.5, alphabet_max + 1.5, 1.0)
    with torch.no_grad():
        cdf = prior.cdf_points(edges).double().numpy()
    pmf = np.diff(cdf, axis=-1)
    pmf[:, 0] += cdf[:, 0]
    pmf[:, -1] += 1.0 - cdf[:, -1]
    return quantize_pmf_to_freqs(pmf)
