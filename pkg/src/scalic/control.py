"""Structure generation from controller settings and (optionally) content.

A controller fixes a compute budget index, a target task, and a quality
index; the control branch turns these (plus a shallow content embedding when
data adaptivity is on) into logits over every edge variant and over the tile
labels. Emitted structures are projected onto the budget's feasible set, so
budget soundness holds for every sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import EDGES, CodecConfig
from .complexity import edge_variant_costs, context_macs, min_max_macs
from .structure_inter import InterChoice
from .structure_intra import TopologyField


@dataclass(frozen=True)
class ControllerState:
    """Controller nodes: budget index, task index, quality index."""

    budget_index: Optional[int] = None  # None -> unconstrained
    task_index: int = 0  # 0 = squared-error task, 1 = structural-similarity task
    quality_index: int = 0
    data_adaptive: bool = False

    def validate(self, num_levels: int, num_qualities: int) -> None:
        if self.budget_index is not None and not 0 <= self.budget_index < num_levels:
            raise ValueError(f"budget index {self.budget_index} out of range")
        if self.task_index not in (0, 1):
            raise ValueError(f"task index {self.task_index} out of range")
        if not 0 <= self.quality_index < num_qualities:
            raise ValueError(f"quality index {self.quality_index} out of range")


@dataclass
class StructureSample:
    """One concrete coding structure: edge choices plus a topology field."""

    choices: dict[str, InterChoice]
    topo: TopologyField

    @property
    def inter_indices(self) -> dict[str, int]:
        return {e: c.index for e, c in self.choices.items()}


class ControlBranch(nn.Module):
    """Shallow content encoder + controller embeddings -> structure logits."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        ch = (16, 32, 48, 64)
        blocks = []
        prev = 3
        for c in ch:
            blocks += [nn.Conv2d(prev, c, 3, stride=2, padding=1), nn.ReLU()]
            prev = c
        # no activation after the last conv: a dead rectifier here would make
        # the pooled embedding constant and silently disable data adaptivity
        self.content = nn.Sequential(*blocks[:-1])
        self.content_proj = nn.Linear(ch[-1], cfg.content_embed_dim)
        self.budget_embed = nn.Embedding(cfg.num_levels + 1, cfg.control_embed_dim)
        self.task_embed = nn.Embedding(2, cfg.control_embed_dim)
        merged = cfg.content_embed_dim + 2 * cfg.control_embed_dim
        self.merge = nn.Sequential(nn.Linear(merged, 64), nn.ReLU())
        self.edge_head = nn.Linear(64, len(EDGES) * cfg.num_variants)
        self.tile_head = nn.Linear(64, cfg.c_groups * 4 * cfg.s_intra)

    def forward(
        self, controller: ControllerState, x: Optional[torch.Tensor] = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        cfg = self.cfg
        if controller.data_adaptive:
            if x is None:
                raise ValueError("data-adaptive control requires the input image")
            feats = self.content(x if x.dim() == 4 else x.unsqueeze(0))
            content = self.content_proj(feats.mean(dim=(-2, -1))).mean(dim=0)
        else:
            content = torch.zeros(cfg.content_embed_dim)
        budget = cfg.num_levels if controller.budget_index is None else controller.budget_index
        emb = torch.cat(
            [
                content,
                self.budget_embed(torch.tensor(budget)),
                self.task_embed(torch.tensor(controller.task_index)),
            ]
        )
        hidden = self.merge(emb)
        edge_logits = self.edge_head(hidden).view(len(EDGES), cfg.num_variants)
        tile_logits = self.tile_head(hidden).view(cfg.c_groups, 2, 2, cfg.s_intra)
        return edge_logits, tile_logits


def budget_table(model, height: int = 64, width: int = 64) -> torch.Tensor:
    """Per-level MAC budgets (geometric, level 0 = largest) at a given size."""
    c_min, c_max = min_max_macs(model, height, width)
    n = model.config.num_levels
    table = torch.logspace(
        torch.log10(torch.tensor(float(c_max))),
        torch.log10(torch.tensor(float(c_min))),
        n,
    )
    # endpoints exact: rounding must never exclude the extreme structures
    table[0] = float(c_max)
    table[-1] = float(c_min)
    return table


def project_to_budget(
    model, inter_indices: dict[str, int], budget: float, height: int, width: int
) -> dict[str, int]:
    """Greedily narrow edges (largest MAC drop first) until under budget."""
    costs = edge_variant_costs(model, height, width)
    ctx = context_macs(model.config, height // 16, width // 16)
    indices = dict(inter_indices)
    total = sum(costs[e][indices[e]] for e in EDGES) + ctx
    floor = sum(costs[e][0] for e in EDGES) + ctx
    if budget < floor:
        raise ValueError(
            f"budget {budget:.0f} MACs below the minimum achievable {floor}"
        )
    while total > budget:
        best_edge, best_drop = None, 0
        for e in EDGES:
            if indices[e] > 0:
                drop = costs[e][indices[e]] - costs[e][indices[e] - 1]
                if drop > best_drop:
                    best_edge, best_drop = e, drop
        indices[best_edge] -= 1
        total -= best_drop
    return indices


def propose_structure(
    model,
    controller: ControllerState,
    x: Optional[torch.Tensor],
    y_h: int,
    y_w: int,
    rng: Optional[torch.Generator] = None,
) -> StructureSample:
    """Sample a structure from the control branch and enforce the budget."""
    cfg = model.config
    controller.validate(cfg.num_levels, cfg.num_qualities)
    edge_logits, tile_logits = model.control(controller, x)
    n = cfg.num_variants
    indices = {}
    for i, e in enumerate(EDGES):
        probs = F.softmax(edge_logits[i], dim=-1)
        indices[e] = int(torch.multinomial(probs, 1, generator=rng))
    if controller.budget_index is not None:
        height, width = y_h * 16, y_w * 16
        budget = float(budget_table(model, height, width)[controller.budget_index])
        indices = project_to_budget(model, indices, budget, height, width)
    flat = tile_logits.view(-1, cfg.s_intra)
    tile = torch.multinomial(F.softmax(flat, dim=-1), 1, generator=rng)
    tile = tile.view(cfg.c_groups, 2, 2)
    choices = {e: InterChoice.one_hot(e, indices[e], n) for e in EDGES}
    topo = TopologyField.from_tile(tile, cfg.s_intra, y_h, y_w)
    return StructureSample(choices=choices, topo=topo)


def non_adaptive_structure(model, level: int, y_h: int, y_w: int) -> StructureSample:
    """The stored stage-2 structure for a complexity level (deterministic)."""
    return model.stored_structure(level, y_h, y_w)
