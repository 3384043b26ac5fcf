"""The assembled codec network.

Holds the four slimmable transforms, the entropy model (factorized prior plus
conditional-Gaussian context/merge path), the per-level structure parameters
trained in stage 2, the stored complexity levels, and the adaptive control
branch. A checkpoint of this module plus its config fully determines both
ends of the codec.
"""

from __future__ import annotations

from typing import Optional

import torch
import torch.nn as nn

from .config import EDGES, CodecConfig
from .control import ControlBranch, StructureSample
from .entropy import ConditionalGaussian, FactorizedPrior, gaussian_rate_bits, quantize
from .structure_inter import InterChoice, InterStructureParams, sample_inter
from .structure_intra import TopologyField, TopologyGenerator, generate_topology, spread_tile
from .transforms import SlimmableTransform

CHECKPOINT_VERSION = 1


def _default_level_indices(num_levels: int, num_variants: int) -> torch.Tensor:
    out = torch.empty(num_levels, len(EDGES), dtype=torch.long)
    for level in range(num_levels):
        frac = (num_levels - 1 - level) / (num_levels - 1)
        out[level] = round(frac * (num_variants - 1))
    return out


class ScalableCodec(nn.Module):
    def __init__(self, config: Optional[CodecConfig] = None):
        super().__init__()
        cfg = config or CodecConfig()
        self.config = cfg
        m = cfg.latent_channels
        self.g_a = SlimmableTransform("analysis", cfg.width_options, m, cfg.use_gdn)
        self.h_a = SlimmableTransform("hyper_analysis", cfg.width_options, m, use_gdn=False)
        self.h_s = SlimmableTransform("hyper_synthesis", cfg.width_options, m, use_gdn=False)
        self.g_s = SlimmableTransform("synthesis", cfg.width_options, m, cfg.use_gdn)
        self.cond = ConditionalGaussian(
            m, cfg.merge_hidden_options, cfg.context_kernel, cfg.sigma_min
        )
        self.z_prior = FactorizedPrior(m)
        # one structure head per stored complexity level
        self.head_logits = nn.Parameter(
            torch.zeros(cfg.num_levels, len(EDGES), cfg.num_variants)
        )
        self.generators = nn.ModuleList(
            TopologyGenerator(cfg.c_groups, cfg.s_intra, cfg.noise_dim, cfg.generator_hidden)
            for _ in range(cfg.num_levels)
        )
        tile = spread_tile(cfg.c_groups, cfg.s_intra)
        for gen in self.generators:
            gen.warm_start(tile)
        self.control = ControlBranch(cfg)
        self.register_buffer(
            "stored_inter", _default_level_indices(cfg.num_levels, cfg.num_variants)
        )
        self.register_buffer(
            "stored_tiles", tile.unsqueeze(0).expand(cfg.num_levels, -1, -1, -1).clone()
        )

    # -- structure plumbing -------------------------------------------------

    def transform(self, edge: str) -> SlimmableTransform:
        return {
            "analysis": self.g_a,
            "hyper_analysis": self.h_a,
            "hyper_synthesis": self.h_s,
            "synthesis": self.g_s,
        }[edge]

    def head_params(self, level: int, temperature: float = 1.0) -> InterStructureParams:
        logits = {e: self.head_logits[level, i] for i, e in enumerate(EDGES)}
        return InterStructureParams(logits=logits, temperature=temperature)

    def sample_head_structure(
        self,
        level: int,
        y_h: int,
        y_w: int,
        temperature: float = 1.0,
        hard: bool = True,
        rng: Optional[torch.Generator] = None,
    ) -> tuple[StructureSample, torch.Tensor]:
        """Draw a trainable structure from head ``level``; returns log q(tile)."""
        params = self.head_params(level, temperature)
        choices = {e: sample_inter(params, e, hard=hard, rng=rng) for e in EDGES}
        topo, log_q = generate_topology(self.generators[level], y_h, y_w, rng=rng)
        return StructureSample(choices=choices, topo=topo), log_q

    def stored_structure(self, level: int, y_h: int, y_w: int) -> StructureSample:
        if not 0 <= level < self.config.num_levels:
            raise IndexError(f"unknown level {level}")
        n = self.config.num_variants
        choices = {
            e: InterChoice.one_hot(e, int(self.stored_inter[level, i]), n)
            for i, e in enumerate(EDGES)
        }
        topo = TopologyField.from_tile(
            self.stored_tiles[level], self.config.s_intra, y_h, y_w
        )
        return StructureSample(choices=choices, topo=topo)

    def fixed_structure(
        self, inter_indices: dict[str, int], tile: torch.Tensor, s_intra: Optional[int] = None
    ) -> "StructureBuilder":
        return StructureBuilder(self, inter_indices, tile, s_intra or self.config.s_intra)

    # -- forward ------------------------------------------------------------

    def forward(
        self,
        x: torch.Tensor,
        sample: StructureSample,
        quant_mode: str = "noise",
        rng: Optional[torch.Generator] = None,
    ) -> dict:
        """Full rate-distortion pass under one structure sample."""
        y = self.g_a(x, sample.choices["analysis"])
        z = self.h_a(y, sample.choices["hyper_analysis"])
        z_hat = quantize(z, quant_mode, rng=rng)
        y_hat = quantize(y, quant_mode, rng=rng)
        hyper = self.h_s(z_hat, sample.choices["hyper_synthesis"])
        mean, scale = self.cond(hyper, y_hat, sample.topo, sample.choices["merge"])
        bits_y = gaussian_rate_bits(y_hat, mean, scale)
        bits_z = self.z_prior.rate_bits(z_hat)
        x_hat = self.g_s(y_hat, sample.choices["synthesis"])
        return {
            "x_hat": x_hat,
            "y": y,
            "y_hat": y_hat,
            "z_hat": z_hat,
            "hyper": hyper,
            "mean": mean,
            "scale": scale,
            "bits_y": bits_y,
            "bits_z": bits_z,
        }

    def rate_y_for_topo(
        self, hyper: torch.Tensor, y_hat: torch.Tensor, topo: TopologyField, merge_choice: InterChoice
    ) -> torch.Tensor:
        mean, scale = self.cond(hyper, y_hat, topo, merge_choice)
        return gaussian_rate_bits(y_hat, mean, scale)


class StructureBuilder:
    """Lazily expands a fixed (indices, tile) pair to any latent size."""

    def __init__(self, model: ScalableCodec, inter_indices: dict[str, int], tile: torch.Tensor, s_intra: int):
        self.model = model
        self.inter_indices = dict(inter_indices)
        self.tile = tile.long()
        self.s_intra = s_intra

    def at(self, y_h: int, y_w: int) -> StructureSample:
        n = self.model.config.num_variants
        choices = {
            e: InterChoice.one_hot(e, self.inter_indices[e], n) for e in EDGES
        }
        topo = TopologyField.from_tile(self.tile, self.s_intra, y_h, y_w)
        return StructureSample(choices=choices, topo=topo)


def save_checkpoint(model: ScalableCodec, path: str, extra: Optional[dict] = None) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "state_dict": model.state_dict(),
    }
    if extra:
        payload.update(extra)
    torch.save(payload, path)


def load_checkpoint(path: str) -> ScalableCodec:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    model = ScalableCodec(CodecConfig.from_dict(payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
