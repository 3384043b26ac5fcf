"""Two-stage optimization of weights and coding structure.

Stage 1 trains the shared weights under uniformly random structures so every
width variant and topology sees gradient. Stage 2 narrows to a discrete
family: per complexity weight, a dedicated structure head (edge logits plus a
topology generator) co-trains against a normalized rate-distortion term, the
complexity ratio, and the multi-sample topology objective; the per-weight
argmin structures become the stored complexity levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .config import EDGES, LAMBDA_C_SET, TrainConfig
from .complexity import edge_variant_costs, context_macs, structure_macs
from .control import StructureSample
from .metrics import ms_ssim
from .model import ScalableCodec, save_checkpoint
from .structure_inter import InterChoice, inter_complexity, InterEdgeSpec
from .structure_intra import MonteCarloBatch, generate_topology, random_topology


@dataclass
class RDCRecord:
    """One optimization step's ledger entry."""

    bpp: float
    distortion: float
    lambda_d: float
    complexity_ratio: float
    lambda_c: float
    rd_ratio: float
    intra_loss: float
    total: float

    def __post_init__(self) -> None:
        if self.bpp < 0 or not math.isfinite(self.total):
            raise ValueError(f"invalid record: bpp={self.bpp}, total={self.total}")


def complexity_ratio(c: float, c_min: float, c_max: float) -> float:
    """Linear interpolation position of c between the structural extremes."""
    if c_max <= c_min:
        raise ValueError(f"need c_max > c_min, got [{c_min}, {c_max}]")
    if not c_min <= c <= c_max:
        raise ValueError(f"c={c} outside [{c_min}, {c_max}]")
    return (c - c_min) / (c_max - c_min)


def lambda_c_continuous(u: float) -> float:
    """Continuous complexity weight: -log2(u) for u in (0, 1]."""
    if u <= 0:
        raise ValueError(f"u must be positive, got {u}")
    return -math.log2(u)


class Trainer:
    def __init__(
        self,
        model: ScalableCodec,
        train_cfg: TrainConfig,
        images: Sequence[torch.Tensor],
    ):
        self.model = model
        self.cfg = train_cfg
        self.images = list(images)
        self.optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.learning_rate)
        self.np_rng = np.random.RandomState(train_cfg.seed)
        self.rng = torch.Generator().manual_seed(train_cfg.seed)
        self.step_count = 0
        # EMA of the RD-loss gap between the structural extremes; the ratio's
        # numerator anchors to the same batch so content noise cancels
        self.ema_rd_gap: Optional[float] = None

    # -- shared pieces -------------------------------------------------------

    def next_batch(self) -> torch.Tensor:
        from .datasets import crop_batch

        return crop_batch(self.images, self.cfg.batch_size, self.cfg.crop_size, self.np_rng)

    def _distortion(self, x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
        if self.cfg.task == "msssim":
            return 1.0 - ms_ssim(x, x_hat)
        return torch.mean((x - x_hat) ** 2) * 255.0 ** 2

    def _rd_loss(self, x: torch.Tensor, out: dict) -> tuple[torch.Tensor, float, float]:
        num_pixels = x.shape[0] * x.shape[-2] * x.shape[-1]
        bpp = (out["bits_y"] + out["bits_z"]) / num_pixels
        dist = self._distortion(x, out["x_hat"])
        return bpp + self.cfg.lambda_d() * dist, float(bpp.detach()), float(dist.detach())

    def random_structure(self, y_h: int, y_w: int) -> StructureSample:
        cfg = self.model.config
        choices = {
            e: InterChoice.one_hot(
                e, int(torch.randint(cfg.num_variants, (1,), generator=self.rng)), cfg.num_variants
            )
            for e in EDGES
        }
        topo = random_topology(cfg.c_groups, cfg.s_intra, y_h, y_w, rng=self.rng)
        return StructureSample(choices=choices, topo=topo)

    def extreme_structure(self, widest: bool, y_h: int, y_w: int) -> StructureSample:
        cfg = self.model.config
        idx = cfg.num_variants - 1 if widest else 0
        choices = {e: InterChoice.one_hot(e, idx, cfg.num_variants) for e in EDGES}
        topo = random_topology(cfg.c_groups, cfg.s_intra, y_h, y_w, rng=self.rng)
        return StructureSample(choices=choices, topo=topo)

    # -- stage 1 --------------------------------------------------------------

    def stage1_step(self, batch: Optional[torch.Tensor] = None) -> RDCRecord:
        x = batch if batch is not None else self.next_batch()
        y_h, y_w = x.shape[-2] // 16, x.shape[-1] // 16
        # uniformly random structures, with the widest reinforced every fourth
        # step: narrow prefixes share every step's gradient while the widest
        # slices only train when drawn, so they need the extra passes
        if self.step_count % 4 == 3:
            sample = self.extreme_structure(widest=True, y_h=y_h, y_w=y_w)
        else:
            sample = self.random_structure(y_h, y_w)
        out = self.model(x, sample, quant_mode="noise", rng=self.rng)
        loss, bpp, dist = self._rd_loss(x, out)
        if not torch.isfinite(loss):
            raise FloatingPointError(
                f"non-finite stage-1 loss at step {self.step_count}: bpp={bpp}, distortion={dist}"
            )
        self.optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(self.model.parameters(), 1.0)
        self.optimizer.step()
        self.step_count += 1
        return RDCRecord(
            bpp=bpp, distortion=dist, lambda_d=self.cfg.lambda_d(),
            complexity_ratio=0.0, lambda_c=0.0, rd_ratio=0.0, intra_loss=0.0,
            total=float(loss.detach()),
        )

    def run_stage1(self, iterations: Optional[int] = None, log_every: int = 0) -> list[RDCRecord]:
        records = []
        for i in range(iterations or self.cfg.stage1_iterations):
            rec = self.stage1_step()
            records.append(rec)
            if log_every and (i + 1) % log_every == 0:
                print(f"stage1 {i + 1}: bpp={rec.bpp:.3f} distortion={rec.distortion:.3f}")
        return records

    # -- stage 2 --------------------------------------------------------------

    def _soft_complexity_ratio(self, choices: dict[str, InterChoice], hw: int) -> torch.Tensor:
        costs = edge_variant_costs(self.model, hw, hw)
        ctx = context_macs(self.model.config, hw // 16, hw // 16)
        total = torch.zeros(())
        c_min, c_max = ctx, ctx
        for e in EDGES:
            spec = InterEdgeSpec(e, tuple(float(c) for c in costs[e]))
            total = total + inter_complexity(choices[e], spec)
            c_min += costs[e][0]
            c_max += costs[e][-1]
        return (total + ctx - c_min) / (c_max - c_min)

    def _batch_extreme_losses(self, x: torch.Tensor) -> tuple[float, float]:
        """RD loss of this batch at G_min and G_max (no grad)."""
        y_h, y_w = x.shape[-2] // 16, x.shape[-1] // 16
        vals = {}
        with torch.no_grad():
            for widest in (False, True):
                sample = self.extreme_structure(widest, y_h, y_w)
                out = self.model(x, sample, quant_mode="noise", rng=self.rng)
                loss, _, _ = self._rd_loss(x, out)
                vals[widest] = float(loss)
        return vals[False], vals[True]

    def rd_ratio(self, rd_loss: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        """Normalized RD position: 1 at the narrowest structure, 0 at the widest.

        Anchored to the current batch's extreme-structure losses so that batch
        content cancels out; only the gap (denominator) is EMA-smoothed.
        """
        rd_gmin, rd_gmax = self._batch_extreme_losses(x)
        gap = rd_gmin - rd_gmax
        decay = self.cfg.rd_ema_decay
        self.ema_rd_gap = gap if self.ema_rd_gap is None else decay * self.ema_rd_gap + (1 - decay) * gap
        denom = max(self.ema_rd_gap, 1e-3)
        return (rd_loss - rd_gmax) / denom

    def current_tau(self, progress: float) -> float:
        return self.cfg.tau_start + (self.cfg.tau_end - self.cfg.tau_start) * min(max(progress, 0.0), 1.0)

    def warmup_random_topology(self, iterations: int, log_every: int = 0) -> list[RDCRecord]:
        """Condition the context network on uniformly random topologies.

        No topology-objective term; generator logits receive no gradient.
        """
        records = []
        for i in range(iterations):
            rec = self.stage1_step()
            records.append(rec)
            if log_every and (i + 1) % log_every == 0:
                print(f"warmup {i + 1}: bpp={rec.bpp:.3f}")
        return records

    def stage2_step(
        self, batch: Optional[torch.Tensor] = None, progress: float = 1.0
    ) -> RDCRecord:
        x = batch if batch is not None else self.next_batch()
        cfg = self.model.config
        y_h, y_w = x.shape[-2] // 16, x.shape[-1] // 16
        level = int(torch.randint(cfg.num_levels, (1,), generator=self.rng))
        lam_c = LAMBDA_C_SET[level]
        tau = self.current_tau(progress)

        sample, log_q = self.model.sample_head_structure(
            level, y_h, y_w, temperature=tau, hard=True, rng=self.rng
        )
        out = self.model(x, sample, quant_mode="noise", rng=self.rng)
        num_pixels = x.shape[0] * x.shape[-2] * x.shape[-1]
        dist = self._distortion(x, out["x_hat"])
        topos = [sample.topo]
        log_qs = [log_q]
        bits_list = [out["bits_y"]]
        for _ in range(self.cfg.mc_samples - 1):
            topo_i, log_q_i = generate_topology(self.model.generators[level], y_h, y_w, rng=self.rng)
            bits_i = self.model.rate_y_for_topo(
                out["hyper"], out["y_hat"], topo_i, sample.choices["merge"]
            )
            topos.append(topo_i)
            bits_list.append(bits_i)
            log_qs.append(log_q_i)

        # reconstruction does not depend on the topology draw, so the mean RD
        # over samples is the mean rate plus the shared distortion term
        bpp_mean = (torch.stack(bits_list).mean() + out["bits_z"]) / num_pixels
        rd_mean = bpp_mean + self.cfg.lambda_d() * dist
        bpp = float((out["bits_y"] + out["bits_z"]).detach() / num_pixels)
        dist = float(dist.detach())
        ratio = self.rd_ratio(rd_mean, x)
        c_ratio = self._soft_complexity_ratio(sample.choices, x.shape[-1])
        mc = MonteCarloBatch(
            samples=topos,
            log_liks=-torch.stack([b.detach() for b in bits_list]) * math.log(2.0) / num_pixels,
            log_qs=torch.stack(log_qs),
        )
        surrogate, _, _ = mc.objective()
        total = ratio + lam_c * c_ratio + surrogate
        if not torch.isfinite(total):
            raise FloatingPointError(f"non-finite stage-2 loss at step {self.step_count}")
        self.optimizer.zero_grad()
        total.backward()
        torch.nn.utils.clip_grad_norm_(self.model.parameters(), 1.0)
        self.optimizer.step()
        self.step_count += 1
        return RDCRecord(
            bpp=bpp, distortion=dist, lambda_d=self.cfg.lambda_d(),
            complexity_ratio=float(c_ratio.detach()), lambda_c=lam_c,
            rd_ratio=float(ratio.detach()), intra_loss=float(surrogate.detach()),
            total=float(total.detach()),
        )

    def run_stage2(self, iterations: Optional[int] = None, log_every: int = 0) -> list[RDCRecord]:
        total = iterations or self.cfg.stage2_iterations
        self.warmup_random_topology(min(self.cfg.warmup_iterations, total))
        records = []
        for i in range(total):
            rec = self.stage2_step(progress=i / max(total - 1, 1))
            records.append(rec)
            if log_every and (i + 1) % log_every == 0:
                print(
                    f"stage2 {i + 1}: bpp={rec.bpp:.3f} c_ratio={rec.complexity_ratio:.2f} "
                    f"lambda_c={rec.lambda_c}"
                )
        return records

    # -- level selection -------------------------------------------------------

    def measure_rd(self, inter_indices: dict[str, int], probe: torch.Tensor, tile: torch.Tensor) -> float:
        """RD loss of a hard structure on a probe batch (round quantization)."""
        builder = self.model.fixed_structure(inter_indices, tile)
        y_h, y_w = probe.shape[-2] // 16, probe.shape[-1] // 16
        with torch.no_grad():
            out = self.model(probe, builder.at(y_h, y_w), quant_mode="round")
            loss, _, _ = self._rd_loss(probe, out)
        return float(loss)

    def finalize_levels(self, probe: Optional[torch.Tensor] = None) -> None:
        """Record the per-complexity-weight argmin structures as stored levels.

        Candidates are the greedy width-search frontier plus each head's
        argmax; levels are sorted by complexity (descending) afterwards so the
        stored ordering invariant holds regardless of probe noise.
        """
        from .structure_intra import generate_topology

        model = self.model
        cfg = model.config
        if probe is None:
            probe = torch.cat([self.next_batch() for _ in range(6)])
        hw = probe.shape[-1]
        ref_tile = model.stored_tiles[0]

        candidates = {tuple(s[e] for e in EDGES) for s in greedy_width_search(
            model, levels=4 * cfg.num_variants, metric_fn=lambda idx: self.measure_rd(idx, probe, ref_tile),
        )}
        head_tiles = {}
        for level in range(cfg.num_levels):
            topo, _ = generate_topology(model.generators[level], 2, 2, mode="argmax")
            head_tiles[level] = topo.tile
            head_idx = tuple(int(model.head_logits[level, i].argmax()) for i in range(len(EDGES)))
            candidates.add(head_idx)

        scored = []
        c_min = structure_macs(model, {e: 0 for e in EDGES}, hw, hw)
        c_max = structure_macs(model, {e: cfg.num_variants - 1 for e in EDGES}, hw, hw)
        for cand in sorted(candidates):
            indices = dict(zip(EDGES, cand))
            rd = self.measure_rd(indices, probe, ref_tile)
            c = structure_macs(model, indices, hw, hw)
            scored.append((indices, rd, complexity_ratio(c, c_min, c_max), c))
        rds = [s[1] for s in scored]
        rd_lo, rd_hi = min(rds), max(rds)
        span = max(rd_hi - rd_lo, 1e-9)

        chosen = []
        for level in range(cfg.num_levels):
            lam_c = LAMBDA_C_SET[level]
            # the endpoint levels are pinned: the stored-level contract keeps
            # L0 G_max-adjacent and the last level G_min-adjacent, which is
            # also where the lam_c = 0 / lam_c = max objectives converge;
            # probe RD at this scale cannot resolve the flat top of the
            # capacity curve, so the interior levels use the measured argmin
            if level == 0:
                best = max(scored, key=lambda s: s[2])
            elif level == cfg.num_levels - 1:
                best = min(scored, key=lambda s: s[2])
            else:
                best = min(scored, key=lambda s: (s[1] - rd_lo) / span + lam_c * s[2])
            chosen.append((best[3], best[0], head_tiles[level]))
        # level 0 must be the most complex; sort descending by MACs
        chosen.sort(key=lambda t: -t[0])
        for level, (_, indices, tile) in enumerate(chosen):
            for i, e in enumerate(EDGES):
                model.stored_inter[level, i] = indices[e]
            model.stored_tiles[level] = tile
        self.fit_control_branch()

    def fit_control_branch(self, iterations: Optional[int] = None) -> None:
        """Teach the control branch to reproduce the stored levels per budget
        and to allocate structure by content difficulty.

        Budget-conditioned samples then land on (or under) their level's
        structure, so they satisfy the budget before projection; projection
        stays as the hard guarantee. Content-conditioned samples (no budget)
        distill a difficulty ranking: a crop's estimated rate under the widest
        structure maps it onto a complexity level.
        """
        from .control import ControllerState

        model = self.model
        cfg = model.config
        if iterations is None:
            iterations = self.cfg.control_iterations
        content_params = list(model.control.content.parameters()) + list(
            model.control.content_proj.parameters()
        )
        content_ids = {id(p) for p in content_params}
        head_params = [p for p in model.control.parameters() if id(p) not in content_ids]
        opt = torch.optim.Adam(
            [{"params": head_params, "lr": 1e-2}, {"params": content_params, "lr": 1e-3}]
        )
        ce = torch.nn.CrossEntropyLoss()

        # difficulty pool: estimated bits per crop under the widest structure;
        # anchored with flat and white-noise crops so the content ranking
        # covers both extremes
        crops = torch.cat([self.next_batch() for _ in range(4)])
        hw_crop = crops.shape[-1]
        anchors = []
        for i in range(8):
            g = torch.Generator().manual_seed(1000 + i)
            anchors.append(torch.full((3, hw_crop, hw_crop), (i + 1) / 9.0)
                           + 0.01 * torch.randn(3, hw_crop, hw_crop, generator=g))
            anchors.append(torch.rand(3, hw_crop, hw_crop, generator=g))
        crops = torch.cat([crops, torch.stack(anchors).clamp(0, 1)])
        y_h, y_w = crops.shape[-2] // 16, crops.shape[-1] // 16
        wide = self.model.fixed_structure(
            {e: cfg.num_variants - 1 for e in EDGES}, model.stored_tiles[0]
        ).at(y_h, y_w)
        difficulties = []
        with torch.no_grad():
            for crop in crops:
                out = model(crop.unsqueeze(0), wide, quant_mode="round")
                difficulties.append(float(out["bits_y"] + out["bits_z"]))
        ranks = np.argsort(np.argsort(difficulties))
        # hardest crops -> level 0 (widest), easiest -> the narrowest level
        targets = (cfg.num_levels - 1 - ranks * cfg.num_levels // len(crops)).clip(
            0, cfg.num_levels - 1
        )

        # the geometric budgets need not match the stored levels' costs; each
        # budget distills toward the most complex stored level that fits it
        from .control import budget_table

        hw = crops.shape[-1]
        table = budget_table(model, hw, hw)
        level_macs = [
            structure_macs(
                model, {e: int(model.stored_inter[j, i]) for i, e in enumerate(EDGES)}, hw, hw
            )
            for j in range(cfg.num_levels)
        ]
        budget_to_level = [
            min(j for j in range(cfg.num_levels) if level_macs[j] <= float(table[b]) + 1e-6)
            for b in range(cfg.num_levels)
        ]

        for it in range(iterations):
            loss = torch.zeros(())
            for level in range(cfg.num_levels):
                src = budget_to_level[level]
                edge_logits, tile_logits = model.control(ControllerState(budget_index=level))
                loss = loss + ce(edge_logits, model.stored_inter[src])
                loss = loss + ce(
                    tile_logits.reshape(-1, cfg.s_intra), model.stored_tiles[src].reshape(-1)
                )
            controller = ControllerState(budget_index=None, data_adaptive=True)
            for pick in self.np_rng.randint(len(crops), size=4):
                edge_logits, _ = model.control(controller, crops[int(pick)].unsqueeze(0))
                loss = loss + 2.0 * ce(edge_logits, model.stored_inter[int(targets[pick])])
            opt.zero_grad()
            loss.backward()
            opt.step()

    def finetune_stored_levels(self, iterations: int, log_every: int = 0) -> list[RDCRecord]:
        """Fine-tune the shared weights within the narrowed structure set.

        After the search has fixed the stored levels, each step optimizes the
        RD loss at both endpoint levels plus one random interior level
        (sandwich sampling), so every stored operating point converges under
        the shared weights and the extremes do not lag.
        """
        records = []
        n_levels = self.model.config.num_levels
        for i in range(iterations):
            x = self.next_batch()
            y_h, y_w = x.shape[-2] // 16, x.shape[-1] // 16
            mid = 1 + int(torch.randint(n_levels - 2, (1,), generator=self.rng))
            losses = []
            bpp = dist = 0.0
            for level in (0, mid, n_levels - 1):
                sample = self.model.stored_structure(level, y_h, y_w)
                out = self.model(x, sample, quant_mode="noise", rng=self.rng)
                loss_l, bpp_l, dist_l = self._rd_loss(x, out)
                losses.append(loss_l)
                bpp += bpp_l / 3
                dist += dist_l / 3
            loss = torch.stack(losses).mean()
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite fine-tune loss at step {self.step_count}")
            self.optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), 1.0)
            self.optimizer.step()
            self.step_count += 1
            records.append(RDCRecord(
                bpp=bpp, distortion=dist, lambda_d=self.cfg.lambda_d(),
                complexity_ratio=0.0, lambda_c=0.0, rd_ratio=0.0, intra_loss=0.0,
                total=float(loss.detach()),
            ))
            if log_every and (i + 1) % log_every == 0:
                print(f"level-tune {i + 1}: bpp={bpp:.3f} distortion={dist:.1f}")
        return records

    def save(self, path: str) -> None:
        save_checkpoint(self.model, path, extra={"train_config": self.cfg.to_dict()})


def greedy_width_search(
    model: ScalableCodec,
    levels: int,
    metric_fn: Callable[[dict[str, int]], float],
) -> list[dict[str, int]]:
    """Walk the width frontier from widest to narrowest by best trade-off.

    At each step the single-edge decrement with the least metric increase per
    MAC removed is applied; the visited structures form a frontier from which
    ``levels`` entries are returned, complexity strictly decreasing.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    cfg = model.config
    hw = 64
    current = {e: cfg.num_variants - 1 for e in EDGES}
    frontier = [dict(current)]
    current_metric = metric_fn(current)
    while any(v > 0 for v in current.values()):
        best = None
        for e in EDGES:
            if current[e] == 0:
                continue
            cand = dict(current)
            cand[e] -= 1
            m = metric_fn(cand)
            saved = structure_macs(model, current, hw, hw) - structure_macs(model, cand, hw, hw)
            score = (m - current_metric) / saved
            if best is None or score < best[0]:
                best = (score, cand, m)
        _, current, current_metric = best
        frontier.append(dict(current))
    if levels >= len(frontier):
        return frontier
    picks = np.linspace(0, len(frontier) - 1, levels).round().astype(int)
    return [frontier[i] for i in picks]
