"""Analytic multiply-accumulate accounting for edges and the whole pipeline.

Counts are mask-oblivious: the dynamic masked convolution zeroes weights but
never skips multiplies, so its cost equals a dense convolution of the same
shape and is identical for every topology.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import EDGES, CodecConfig
from .transforms import transform_macs


def conv_macs(h_out: int, w_out: int, c_out: int, c_in: int, k: int) -> int:
    """Multiplies of a dense KxK convolution producing an h_out x w_out map."""
    if min(h_out, w_out, c_out, c_in, k) <= 0:
        raise ValueError("all convolution dimensions must be positive")
    return h_out * w_out * c_out * c_in * k * k


def merge_macs(cfg: CodecConfig, variant: int, y_h: int, y_w: int) -> int:
    m = cfg.latent_channels
    h1, h2 = cfg.merge_hidden_options[variant]
    total = conv_macs(y_h, y_w, h1, 4 * m, 1)
    total += conv_macs(y_h, y_w, h2, h1, 1)
    total += conv_macs(y_h, y_w, 2 * m, h2, 1)
    return total


def context_macs(cfg: CodecConfig, y_h: int, y_w: int) -> int:
    m = cfg.latent_channels
    return conv_macs(y_h, y_w, 2 * m, m, cfg.context_kernel)


def edge_variant_costs(model, height: int, width: int) -> dict[str, tuple[int, ...]]:
    """Absolute MACs per variant for every slimmable edge at this image size."""
    cfg = model.config
    y_h, y_w = height // 16, width // 16
    input_sizes = {
        "analysis": (height, width),
        "hyper_analysis": (y_h, y_w),
        "hyper_synthesis": (height // 64, width // 64),
        "synthesis": (y_h, y_w),
    }
    costs: dict[str, tuple[int, ...]] = {}
    for edge in EDGES:
        if edge == "merge":
            costs[edge] = tuple(
                merge_macs(cfg, v, y_h, y_w) for v in range(cfg.num_variants)
            )
        else:
            h, w = input_sizes[edge]
            costs[edge] = tuple(
                transform_macs(model.transform(edge), v, h, w)
                for v in range(cfg.num_variants)
            )
    return costs


def structure_macs(model, inter_indices: dict[str, int], height: int, width: int) -> int:
    """Total pipeline MACs for hard edge choices (context cost included)."""
    costs = edge_variant_costs(model, height, width)
    total = sum(costs[e][inter_indices[e]] for e in EDGES)
    total += context_macs(model.config, height // 16, width // 16)
    return total


def min_max_macs(model, height: int, width: int) -> tuple[int, int]:
    n = model.config.num_variants
    lo = structure_macs(model, {e: 0 for e in EDGES}, height, width)
    hi = structure_macs(model, {e: n - 1 for e in EDGES}, height, width)
    return lo, hi


@dataclass
class ComplexityReport:
    per_edge: dict[str, int]
    context: int
    total: int
    kmacs_per_pixel: float
    c_min: int
    c_max: int
    ratio: float

    def __post_init__(self) -> None:
        if self.total != sum(self.per_edge.values()) + self.context:
            raise ValueError("total must equal the sum of its parts")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"ratio must be in [0, 1], got {self.ratio}")


def pipeline_report(model, inter_indices: dict[str, int], height: int, width: int) -> ComplexityReport:
    costs = edge_variant_costs(model, height, width)
    per_edge = {e: costs[e][inter_indices[e]] for e in EDGES}
    ctx = context_macs(model.config, height // 16, width // 16)
    total = sum(per_edge.values()) + ctx
    c_min, c_max = min_max_macs(model, height, width)
    ratio = (total - c_min) / (c_max - c_min) if c_max > c_min else 0.0
    return ComplexityReport(
        per_edge=per_edge,
        context=ctx,
        total=total,
        kmacs_per_pixel=total / (height * width) / 1000.0,
        c_min=c_min,
        c_max=c_max,
        ratio=ratio,
    )
