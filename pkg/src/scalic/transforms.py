"""Slimmable neural transforms between image, latent, and hyper-latent.

Each transform keeps one full-width weight set; a narrower configuration uses
the leading slice of every hidden layer's weights, so narrower widths are
exact prefixes of wider ones and no parameters are duplicated. Output channel
counts are fixed (latent size never depends on the width choice), which keeps
rate scalability independent from computational scalability.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .structure_inter import InterChoice, mix_edge_outputs

ROLES = ("analysis", "hyper_analysis", "hyper_synthesis", "synthesis")


def _softplus_inv(y: float) -> float:
    return float(torch.log(torch.expm1(torch.tensor(y))))


class SlimGDN(nn.Module):
    """Divisive normalization with per-width parameters.

    y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2); ``inverse`` multiplies
    instead of dividing (for synthesis stacks). Each width option keeps its
    own beta/gamma: activation statistics differ across widths, and sharing
    them miscalibrates the narrow paths.
    """

    def __init__(self, max_channels: int, num_variants: int = 1, inverse: bool = False):
        super().__init__()
        self.inverse = inverse
        self.beta_raw = nn.Parameter(
            torch.full((num_variants, max_channels), _softplus_inv(1.0))
        )
        gamma = torch.full((max_channels, max_channels), -9.0)
        gamma.fill_diagonal_(_softplus_inv(0.1))
        self.gamma_raw = nn.Parameter(gamma.expand(num_variants, -1, -1).clone())

    def forward(self, x: torch.Tensor, variant: int = 0) -> torch.Tensor:
        c = x.shape[1]
        beta = F.softplus(self.beta_raw[variant, :c]) + 1e-6
        gamma = F.softplus(self.gamma_raw[variant, :c, :c])
        norm = F.conv2d(x * x, gamma.reshape(c, c, 1, 1), beta)
        norm = torch.sqrt(norm)
        return x * norm if self.inverse else x / norm


class SlimConv2d(nn.Module):
    def __init__(self, max_in: int, max_out: int, kernel: int, stride: int = 1):
        super().__init__()
        self.kernel = kernel
        self.stride = stride
        self.weight = nn.Parameter(torch.empty(max_out, max_in, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(max_out))
        nn.init.kaiming_normal_(self.weight)

    def forward(self, x: torch.Tensor, out_ch: int) -> torch.Tensor:
        in_ch = x.shape[1]
        return F.conv2d(
            x,
            self.weight[:out_ch, :in_ch],
            self.bias[:out_ch],
            stride=self.stride,
            padding=self.kernel // 2,
        )


class SlimConvTranspose2d(nn.Module):
    def __init__(self, max_in: int, max_out: int, kernel: int, stride: int = 2):
        super().__init__()
        self.kernel = kernel
        self.stride = stride
        self.weight = nn.Parameter(torch.empty(max_in, max_out, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(max_out))
        nn.init.kaiming_normal_(self.weight)

    def forward(self, x: torch.Tensor, out_ch: int) -> torch.Tensor:
        in_ch = x.shape[1]
        return F.conv_transpose2d(
            x,
            self.weight[:in_ch, :out_ch],
            self.bias[:out_ch],
            stride=self.stride,
            padding=self.kernel // 2,
            output_padding=self.stride - 1,
        )


# layer descriptors: (op, in_kind, out_kind, kernel, stride)
# kinds: "img"=3, "w"=active width, "lat"=latent channels, "lat2"=2*latent
def _layer_plan(role: str, use_gdn: bool) -> list[tuple]:
    act = "gdn" if use_gdn else "relu"
    if role == "analysis":
        return [
            ("conv", "img", "w", 5, 2), (act, "w"),
            ("conv", "w", "w", 5, 2), (act, "w"),
            ("conv", "w", "w", 5, 2), (act, "w"),
            ("conv", "w", "lat", 5, 2),
        ]
    if role == "synthesis":
        iact = "igdn" if use_gdn else "relu"
        return [
            ("deconv", "lat", "w", 5, 2), (iact, "w"),
            ("deconv", "w", "w", 5, 2), (iact, "w"),
            ("deconv", "w", "w", 5, 2), (iact, "w"),
            ("deconv", "w", "img", 5, 2),
        ]
    if role == "hyper_analysis":
        return [
            ("conv", "lat", "w", 3, 1), ("relu", "w"),
            ("conv", "w", "w", 5, 2), ("relu", "w"),
            ("conv", "w", "lat", 5, 2),
        ]
    if role == "hyper_synthesis":
        return [
            ("deconv", "lat", "w", 5, 2), ("relu", "w"),
            ("deconv", "w", "w", 5, 2), ("relu", "w"),
            ("conv", "w", "lat2", 3, 1),
        ]
    raise ValueError(f"unknown role {role!r}")


class SlimmableTransform(nn.Module):
    """One of the four codec transforms, parameterized by a width choice."""

    def __init__(
        self,
        role: str,
        width_options: tuple[int, ...],
        latent_channels: int,
        use_gdn: bool = True,
    ):
        super().__init__()
        if role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {role!r}")
        self.role = role
        self.width_options = tuple(width_options)
        self.latent_channels = latent_channels
        self.plan = _layer_plan(role, use_gdn)
        w_max = max(width_options)
        sizes = {"img": 3, "w": w_max, "lat": latent_channels, "lat2": 2 * latent_channels}
        n_variants = len(width_options)
        layers = []
        for spec in self.plan:
            if spec[0] == "conv":
                _, cin, cout, k, s = spec
                layers.append(SlimConv2d(sizes[cin], sizes[cout], k, s))
            elif spec[0] == "deconv":
                _, cin, cout, k, s = spec
                layers.append(SlimConvTranspose2d(sizes[cin], sizes[cout], k, s))
            elif spec[0] == "gdn":
                layers.append(SlimGDN(w_max, n_variants))
            elif spec[0] == "igdn":
                layers.append(SlimGDN(w_max, n_variants, inverse=True))
            else:  # relu
                layers.append(nn.ReLU())
        self.layers = nn.ModuleList(layers)

    @property
    def total_stride(self) -> int:
        s = 1
        for spec in self.plan:
            if spec[0] in ("conv", "deconv"):
                s *= spec[4]
        return s

    def _run(self, x: torch.Tensor, variant: int) -> torch.Tensor:
        width = self.width_options[variant]
        sizes = {"img": 3, "w": width, "lat": self.latent_channels, "lat2": 2 * self.latent_channels}
        for spec, layer in zip(self.plan, self.layers):
            if spec[0] in ("conv", "deconv"):
                x = layer(x, sizes[spec[2]])
            elif isinstance(layer, SlimGDN):
                x = layer(x, variant)
            else:
                x = layer(x)
        return x

    def forward(self, x: torch.Tensor, choice: InterChoice) -> torch.Tensor:
        if choice.index >= len(self.width_options):
            raise IndexError(
                f"variant index {choice.index} out of range for {len(self.width_options)} widths"
            )
        down = [spec[4] for spec in self.plan if spec[0] == "conv"]
        stride = 1
        for s in down:
            stride *= s
        if self.role in ("analysis", "hyper_analysis") and (
            x.shape[-2] % stride or x.shape[-1] % stride
        ):
            raise ValueError(f"spatial size {tuple(x.shape[-2:])} not divisible by stride {stride}")
        w = choice.weights
        if not w.requires_grad and torch.count_nonzero(w) == 1:
            return self._run(x, self.width_options[choice.index])
        outputs = [self._run(x, width) for width in self.width_options]
        return mix_edge_outputs(choice, outputs)

    def layer_shapes(self, height: int, width: int, variant: int) -> list[tuple]:
        """Per-layer (kind, C_in, C_out, K, H_out, W_out, H_in, W_in) records."""
        sizes = {
            "img": 3,
            "w": self.width_options[variant],
            "lat": self.latent_channels,
            "lat2": 2 * self.latent_channels,
        }
        records = []
        h, w = height, width
        for spec in self.plan:
            if spec[0] == "conv":
                _, cin, cout, k, s = spec
                h2, w2 = h // s, w // s
                records.append(("conv", sizes[cin], sizes[cout], k, h2, w2, h, w))
                h, w = h2, w2
            elif spec[0] == "deconv":
                _, cin, cout, k, s = spec
                h2, w2 = h * s, w * s
                records.append(("deconv", sizes[cin], sizes[cout], k, h2, w2, h, w))
                h, w = h2, w2
            elif spec[0] in ("gdn", "igdn"):
                records.append(("gdn", sizes[spec[1]], sizes[spec[1]], 1, h, w, h, w))
        return records


def transform_macs(transform: SlimmableTransform, variant: int, height: int, width: int) -> int:
    """Analytic multiply count for one width variant on a given input size.

    Convolutions count H_out*W_out*C_out*C_in*K*K; transposed convolutions
    apply each weight once per input position (H_in*W_in*C_in*C_out*K*K); the
    divisive-normalization stages count their 1x1 channel mixing.
    """
    total = 0
    for kind, cin, cout, k, h_out, w_out, h_in, w_in in transform.layer_shapes(height, width, variant):
        if kind == "deconv":
            total += h_in * w_in * cin * cout * k * k
        else:
            total += h_out * w_out * cout * cin * k * k
    return total
