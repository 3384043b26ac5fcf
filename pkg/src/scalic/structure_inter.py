"""Edge-variant selection between latent groups.

Each connection between adjacent variable groups (image -> latent, latent ->
hyper-latent, and back) exists in several widths; exactly one is active at a
time. Choices are relaxed to a simplex via Gumbel-softmax so the selection is
trainable end to end, and the same mixing weights price the computation of the
selected edge.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import torch


@dataclass(frozen=True)
class InterEdgeSpec:
    """One slimmable edge: its name and per-variant MAC costs."""

    edge_id: str
    variant_costs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.variant_costs) < 1:
            raise ValueError("edge needs at least one variant")
        for a, b in zip(self.variant_costs, self.variant_costs[1:]):
            if not b > a:
                raise ValueError(
                    f"variant_costs must be strictly increasing, got {self.variant_costs}"
                )

    @property
    def num_variants(self) -> int:
        return len(self.variant_costs)


@dataclass
class InterStructureParams:
    """Categorical logits per edge plus the shared relaxation temperature."""

    logits: dict[str, torch.Tensor]
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")


@dataclass
class InterChoice:
    """A sampled (or fixed) variant selection for one edge.

    ``weights`` is a simplex vector; for hard choices it is one-hot at
    ``index`` while gradients still flow through the underlying relaxation.
    """

    edge_id: str
    index: int
    weights: torch.Tensor

    def __post_init__(self) -> None:
        w = self.weights.detach()
        if torch.any(w < -1e-6) or abs(float(w.sum()) - 1.0) > 1e-6:
            raise ValueError("weights must be nonnegative and sum to 1")

    @classmethod
    def one_hot(cls, edge_id: str, index: int, num_variants: int) -> "InterChoice":
        w = torch.zeros(num_variants)
        w[index] = 1.0
        return cls(edge_id, index, w)


def sample_inter(
    params: InterStructureParams,
    edge_id: str,
    hard: bool = True,
    rng: Optional[torch.Generator] = None,
) -> InterChoice:
    """Draw one Gumbel-softmax sample for ``edge_id``.

    With ``hard`` the returned weights are one-hot at the argmax but carry
    straight-through gradients from the soft relaxation.
    """
    if edge_id not in params.logits:
        raise KeyError(f"unknown edge {edge_id!r}")
    logits = params.logits[edge_id]
    if not torch.isfinite(logits).all():
        raise ValueError(f"non-finite logits for edge {edge_id!r}")

    u = torch.rand(logits.shape, generator=rng, dtype=torch.float64)
    u = u.clamp(1e-12, 1.0 - 1e-12)
    gumbel = -torch.log(-torch.log(u)).to(logits.dtype)
    soft = torch.softmax((logits + gumbel) / params.temperature, dim=-1)
    index = int(soft.argmax())
    if hard:
        one_hot = torch.zeros_like(soft)
        one_hot[index] = 1.0
        weights = one_hot + soft - soft.detach()
    else:
        weights = soft
    return InterChoice(edge_id, index, weights)


def mix_edge_outputs(choice: InterChoice, variant_outputs: Sequence[torch.Tensor]) -> torch.Tensor:
    """Weighted sum of the per-variant outputs under the choice weights."""
    if len(variant_outputs) != choice.weights.numel():
        raise ValueError(
            f"expected {choice.weights.numel()} variant outputs, got {len(variant_outputs)}"
        )
    shape = variant_outputs[0].shape
    for out in variant_outputs[1:]:
        if out.shape != shape:
            raise ValueError("variant outputs must share one shape")
    # exact passthrough for hard one-hot weights: no float drift allowed
    w = choice.weights
    if not w.requires_grad and torch.count_nonzero(w) == 1:
        return variant_outputs[choice.index]
    mixed = torch.zeros_like(variant_outputs[0])
    for wn, out in zip(w, variant_outputs):
        mixed = mixed + wn * out
    return mixed


def inter_complexity(choice: InterChoice, spec: InterEdgeSpec) -> torch.Tensor:
    """MAC cost of the chosen edge, mixed with the same weights (differentiable)."""
    if choice.edge_id != spec.edge_id:
        raise ValueError(f"choice is for {choice.edge_id!r}, spec for {spec.edge_id!r}")
    if choice.weights.numel() != spec.num_variants:
        raise ValueError("weights length must equal the number of variants")
    costs = torch.as_tensor(spec.variant_costs, dtype=choice.weights.dtype)
    return (choice.weights * costs).sum()
