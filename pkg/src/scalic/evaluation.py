"""Evaluation harness: rate-quality sweeps and the context-variant comparison."""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .codec import compress, decompress
from .complexity import pipeline_report
from .config import EDGES, TrainConfig
from .control import ControllerState
from .metrics import ms_ssim, psnr
from .model import ScalableCodec
from .structure_inter import InterChoice
from .structure_intra import (
    MonteCarloBatch,
    TopologyField,
    generate_topology,
    random_topology,
)

CSV_COLUMNS = ("image", "level", "quality", "task", "bpp", "psnr", "msssim", "macs_kpp", "stages")


@dataclass
class RDPoint:
    bpp: float
    psnr: float
    msssim: float
    macs: float
    level: int
    quality: int

    def __post_init__(self) -> None:
        if self.bpp <= 0:
            raise ValueError(f"bpp must be positive, got {self.bpp}")
        if not math.isfinite(self.psnr):
            raise ValueError("psnr must be finite")


def evaluate_image(
    model: ScalableCodec,
    name: str,
    image: torch.Tensor,
    level: int,
    quality: int = 0,
    task: int = 0,
) -> dict:
    controller = ControllerState(budget_index=level, task_index=task, quality_index=quality)
    result = compress(image, model, controller)
    rec = decompress(result.blob, model)
    report = pipeline_report(
        model, result.structure.inter_indices, image.shape[-2], image.shape[-1]
    )
    num_pixels = image.shape[-2] * image.shape[-1]
    return {
        "image": name,
        "level": level,
        "quality": quality,
        "task": task,
        "bpp": len(result.blob) * 8 / num_pixels,
        "psnr": psnr(image, rec.image),
        "msssim": float(ms_ssim(image, rec.image)),
        "macs_kpp": report.kmacs_per_pixel,
        "stages": rec.stages_executed,
    }


def evaluate_dataset(
    model: ScalableCodec,
    images: Sequence[tuple[str, torch.Tensor]],
    levels: Sequence[int],
    quality: int = 0,
    task: int = 0,
) -> list[dict]:
    rows = []
    for name, image in images:
        for level in levels:
            rows.append(evaluate_image(model, name, image, level, quality, task))
    return rows


def write_csv(rows: Sequence[dict], path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in CSV_COLUMNS})


def plot_rd(rows: Sequence[dict], out_path: str) -> str:
    """Rate-distortion plot per level; also writes the plotted points as CSV."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_level: dict[int, list[dict]] = {}
    for row in rows:
        by_level.setdefault(int(row["level"]), []).append(row)
    fig, ax = plt.subplots(figsize=(6, 4))
    agg_rows = []
    for level in sorted(by_level):
        pts = by_level[level]
        bpp = float(np.mean([float(p["bpp"]) for p in pts]))
        quality = float(np.mean([float(p["psnr"]) for p in pts]))
        macs = float(np.mean([float(p["macs_kpp"]) for p in pts]))
        ax.plot(bpp, quality, "o", label=f"level {level} ({macs:.0f} kMAC/px)")
        agg_rows.append({"level": level, "bpp": bpp, "psnr": quality, "macs_kpp": macs})
    ax.set_xlabel("bits per pixel")
    ax.set_ylabel("PSNR (dB)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    csv_path = out_path.rsplit(".", 1)[0] + ".csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=("level", "bpp", "psnr", "macs_kpp"))
        writer.writeheader()
        writer.writerows(agg_rows)
    return csv_path


# ---------------------------------------------------------------------------
# context-variant comparison: frozen backbone, per-variant context fine-tune
# ---------------------------------------------------------------------------

NAMED_TOPOLOGIES = ("baseline", "checkerboard", "channelwise", "learned-2", "learned-4", "learned-10")



def handcrafted_tile(name: str, latent_channels: int) -> tuple[torch.Tensor, int]:
    """(tile, s_intra) for the hand-crafted reference topologies.

    Group counts follow the same rule the codec uses (largest divisor of the
    latent channels not exceeding the partite count).
    """
    from .config import groups_for

    if name == "baseline":  # no usable context: single partite
        return torch.zeros(groups_for(latent_channels, 1), 2, 2, dtype=torch.long), 1
    if name == "checkerboard":
        g = groups_for(latent_channels, 2)
        tile = torch.tensor([[0, 1], [1, 0]]).expand(g, 2, 2)
        return tile.clone(), 2
    if name == "channelwise":
        g = groups_for(latent_channels, 2)
        tile = torch.arange(g).view(-1, 1, 1).expand(g, 2, 2) % 2
        return tile.clone(), 2
    raise KeyError(f"unknown hand-crafted topology {name!r}")


def finetune_context(
    model: ScalableCodec,
    images: Sequence[torch.Tensor],
    variant: str,
    iterations: int,
    train_cfg: Optional[TrainConfig] = None,
    log_every: int = 0,
) -> dict:
    """Fine-tune only the context/merge path for one topology variant.

    Transforms and priors stay frozen, so reconstructions are identical
    across variants and the rate isolates the context model's value. For
    ``learned-K`` variants a topology generator trains jointly through the
    multi-sample objective after a short random-topology warmup.
    """
    cfg = train_cfg or TrainConfig()
    rng = torch.Generator().manual_seed(cfg.seed)
    np_rng = np.random.RandomState(cfg.seed)
    learned = variant.startswith("learned-")
    if learned:
        s_intra = int(variant.split("-")[1])
        from .config import groups_for
        from .structure_intra import TopologyGenerator, spread_tile

        c_groups = groups_for(model.config.latent_channels, s_intra)
        generator = TopologyGenerator(
            c_groups, s_intra, model.config.noise_dim, model.config.generator_hidden
        )
        generator.warm_start(spread_tile(c_groups, s_intra))
        params = list(model.cond.parameters()) + list(generator.parameters())
    else:
        tile, s_intra = handcrafted_tile(variant, model.config.latent_channels)
        generator = None
        params = list(model.cond.parameters())
    optimizer = torch.optim.Adam(params, lr=cfg.learning_rate)
    merge_choice = InterChoice.one_hot("merge", model.config.num_variants - 1, model.config.num_variants)
    wide = {e: InterChoice.one_hot(e, model.config.num_variants - 1, model.config.num_variants) for e in EDGES}

    from .datasets import crop_batch

    # learned variants: short random-topology warmup, then structure search,
    # then a commit phase that specializes the context on the chosen topology
    warmup = iterations // 10 if learned else 0
    commit_at = int(iterations * 0.7) if learned else 0
    committed_tile = None
    for i in range(iterations):
        x = crop_batch(list(images), cfg.batch_size, cfg.crop_size, np_rng)
        with torch.no_grad():
            y = model.g_a(x, wide["analysis"])
            z = model.h_a(y, wide["hyper_analysis"])
            z_hat = torch.round(z).clamp(model.config.alphabet_min, model.config.alphabet_max)
            y_hat = torch.round(y).clamp(model.config.alphabet_min, model.config.alphabet_max)
            hyper = model.h_s(z_hat, wide["hyper_synthesis"])
        y_h, y_w = y_hat.shape[-2:]
        num_pixels = x.shape[0] * x.shape[-2] * x.shape[-1]
        if learned and i < warmup:
            topo = random_topology(generator.c_groups, s_intra, y_h, y_w, rng=rng)
            loss = model.rate_y_for_topo(hyper, y_hat, topo, merge_choice) / num_pixels
        elif learned and i < commit_at:
            topos, bits_list, log_qs = [], [], []
            for _ in range(cfg.mc_samples):
                topo_i, log_q_i = generate_topology(generator, y_h, y_w, rng=rng)
                topos.append(topo_i)
                bits_list.append(model.rate_y_for_topo(hyper, y_hat, topo_i, merge_choice))
                log_qs.append(log_q_i)
            mc = MonteCarloBatch(
                samples=topos,
                log_liks=-torch.stack([b.detach() for b in bits_list]) * math.log(2.0) / num_pixels,
                log_qs=torch.stack(log_qs),
            )
            surrogate, _, _ = mc.objective()
            loss = torch.stack(bits_list).mean() / num_pixels + surrogate
        else:
            if learned and committed_tile is None:
                topo_final, _ = generate_topology(generator, 2, 2, mode="argmax")
                committed_tile = topo_final.tile
            use_tile = committed_tile if learned else tile
            topo = TopologyField.from_tile(use_tile, s_intra, y_h, y_w)
            loss = model.rate_y_for_topo(hyper, y_hat, topo, merge_choice) / num_pixels
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        if log_every and (i + 1) % log_every == 0:
            print(f"  {variant} {i + 1}/{iterations}: bpp_y={float(loss.detach()):.4f}")

    if learned:
        tile = committed_tile
    return {"tile": tile, "s_intra": s_intra, "cond_state": copy.deepcopy(model.cond.state_dict())}


def ar_variant_harness(
    model: ScalableCodec,
    variants: Sequence[str],
    train_images: Sequence[torch.Tensor],
    eval_images: Sequence[torch.Tensor],
    iterations: int = 400,
    train_cfg: Optional[TrainConfig] = None,
    log_every: int = 0,
) -> dict[str, float]:
    """Mean coded BPP per named topology variant over the evaluation set.

    The backbone is frozen (shared across variants), so reconstructions
    match; each variant fine-tunes its own copy of the context/merge path.
    """
    base_cond = copy.deepcopy(model.cond.state_dict())
    results: dict[str, float] = {}
    tuned: dict[str, dict] = {}
    for variant in variants:
        model.cond.load_state_dict(base_cond)
        tuned[variant] = finetune_context(
            model, train_images, variant, iterations, train_cfg, log_every=log_every
        )
    for variant in variants:
        model.cond.load_state_dict(tuned[variant]["cond_state"])
        builder = model.fixed_structure(
            {e: model.config.num_variants - 1 for e in EDGES},
            tuned[variant]["tile"],
            tuned[variant]["s_intra"],
        )
        bpps = []
        for image in eval_images:
            result = compress_with_structure(image, model, builder)
            num_pixels = image.shape[-2] * image.shape[-1]
            bpps.append(result.payload_bits / num_pixels)
        results[variant] = float(np.mean(bpps))
    model.cond.load_state_dict(base_cond)
    return results


def compress_with_structure(image: torch.Tensor, model: ScalableCodec, builder):
    """Compress with an explicitly fixed structure (bypassing the controller)."""
    from . import codec as codec_mod

    y_h = -(-image.shape[-2] // 64) * 4
    y_w = -(-image.shape[-1] // 64) * 4
    sample = builder.at(y_h, y_w)
    return codec_mod.compress_given_structure(image, model, sample)
