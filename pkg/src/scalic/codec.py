"""End-to-end compression and decompression.

Symbol orders are fixed and documented: the hyper-latent is coded
channel-major (channel, row, col); the main latent is coded stage-major, then
raster within a stage, then ascending channel at each position. The decoder
runs one context + merge invocation per stage, each time seeing every
previously decoded partite, and never reads a symbol before its causal
ancestors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from . import bitstream, rans
from .control import ControllerState, StructureSample, non_adaptive_structure, propose_structure
from .entropy import factorized_freq_table, gaussian_freq_table, gaussian_rate_bits
from .model import ScalableCodec
from .structure_intra import TopologyField


@dataclass
class LatentPack:
    """Quantized latents as coded (clamped to the alphabet)."""

    y_hat: torch.Tensor
    z_hat: torch.Tensor


@dataclass
class CompressResult:
    blob: bytes
    latents: LatentPack
    estimated_bits: float
    header_bits: int
    payload_bits: int
    structure: StructureSample


@dataclass
class DecompressResult:
    image: torch.Tensor
    latents: LatentPack
    stages_executed: int


def pad_to_multiple(x: torch.Tensor, multiple: int = 64) -> torch.Tensor:
    h, w = x.shape[-2:]
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph == 0 and pw == 0:
        return x
    return F.pad(x, (0, pw, 0, ph), mode="replicate")


def _z_order_ids(channels: int, h: int, w: int) -> np.ndarray:
    return np.repeat(np.arange(channels), h * w)


def _stage_order(stage_map: np.ndarray) -> np.ndarray:
    """Flat indices into (C, H, W) in stage-major / raster / channel order."""
    c, h, w = stage_map.shape
    ch_idx, h_idx, w_idx = np.meshgrid(
        np.arange(c), np.arange(h), np.arange(w), indexing="ij"
    )
    order = np.lexsort(
        (ch_idx.ravel(), w_idx.ravel(), h_idx.ravel(), stage_map.ravel())
    )
    return order


def _channel_stage_map(topo: TopologyField, channels: int) -> np.ndarray:
    groups = torch.arange(channels) % topo.c_groups
    return topo.field[groups].numpy()


def resolve_structure(
    model: ScalableCodec,
    controller: ControllerState,
    x: Optional[torch.Tensor],
    y_h: int,
    y_w: int,
    rng: Optional[torch.Generator] = None,
) -> StructureSample:
    if controller.data_adaptive:
        return propose_structure(model, controller, x, y_h, y_w, rng=rng)
    level = controller.budget_index if controller.budget_index is not None else 0
    return non_adaptive_structure(model, level, y_h, y_w)


def compress(
    x: torch.Tensor,
    model: ScalableCodec,
    controller: ControllerState,
    rng: Optional[torch.Generator] = None,
) -> CompressResult:
    cfg = model.config
    controller.validate(cfg.num_levels, cfg.num_qualities)
    if x.dim() == 3:
        x = x.unsqueeze(0)
    hp = -(-x.shape[-2] // 64) * 64
    wp = -(-x.shape[-1] // 64) * 64
    sample = resolve_structure(
        model, controller, pad_to_multiple(x.clamp(0.0, 1.0)), hp // 16, wp // 16, rng=rng
    )
    return compress_given_structure(
        x, model, sample, quality=controller.quality_index, task=controller.task_index
    )


def compress_given_structure(
    x: torch.Tensor,
    model: ScalableCodec,
    sample: StructureSample,
    quality: int = 0,
    task: int = 0,
) -> CompressResult:
    cfg = model.config
    if x.dim() == 3:
        x = x.unsqueeze(0)
    if x.min() < -0.01 or x.max() > 1.01:
        raise ValueError("pixel values must lie in [0, 1]")
    orig_h, orig_w = x.shape[-2:]
    x_pad = pad_to_multiple(x.clamp(0.0, 1.0))
    hp, wp = x_pad.shape[-2:]
    y_h, y_w = hp // 16, wp // 16

    amin, amax = cfg.alphabet_min, cfg.alphabet_max
    with torch.no_grad():
        y = model.g_a(x_pad, sample.choices["analysis"])
        z = model.h_a(y, sample.choices["hyper_analysis"])
        z_hat = torch.round(z).clamp(amin, amax)
        y_hat = torch.round(y).clamp(amin, amax)
        hyper = model.h_s(z_hat, sample.choices["hyper_synthesis"])
        mean, scale = model.cond(hyper, y_hat, sample.topo, sample.choices["merge"])
        est_bits_y = float(gaussian_rate_bits(y_hat, mean, scale, alphabet=(amin, amax)))
        est_bits_z = float(model.z_prior.rate_bits(z_hat, alphabet=(amin, amax)))

    # hyper-latent payload: channel-major order, one table per channel
    z_np = (z_hat[0].numpy().astype(np.int64) - amin).ravel()
    z_freqs = factorized_freq_table(model.z_prior, amin, amax)
    z_cdfs = rans.cumulative_freqs(z_freqs)
    z_ids = _z_order_ids(cfg.latent_channels, hp // 64, wp // 64)
    z_buf = rans.encode_indexed(z_np, z_cdfs, z_ids)

    # main payload: stage-major order, one table per node
    stage_map = _channel_stage_map(sample.topo, cfg.latent_channels)
    order = _stage_order(stage_map)
    y_np = (y_hat[0].numpy().astype(np.int64) - amin).ravel()[order]
    mean_np = mean[0].double().numpy().ravel()[order]
    scale_np = scale[0].double().numpy().ravel()[order]
    y_freqs = gaussian_freq_table(mean_np, scale_np, amin, amax)
    y_cdfs = rans.cumulative_freqs(y_freqs)
    y_buf = rans.encode_indexed(y_np, y_cdfs, np.arange(len(y_np)))

    header = bitstream.Header(
        height=orig_h,
        width=orig_w,
        quality=quality,
        task=task,
        gen_choices=(
            sample.inter_indices["hyper_synthesis"],
            sample.inter_indices["synthesis"],
            sample.inter_indices["merge"],
        ),
        s_intra=sample.topo.s_intra,
        tile=sample.topo.tile,
    )
    blob = bitstream.pack(header, z_buf.to_bytes(), y_buf.to_bytes())
    header_bits = 8 * bitstream.header_num_bytes(sample.topo.c_groups)
    return CompressResult(
        blob=blob,
        latents=LatentPack(y_hat=y_hat[0], z_hat=z_hat[0]),
        estimated_bits=est_bits_y + est_bits_z,
        header_bits=header_bits,
        payload_bits=8 * (len(z_buf.data) + len(y_buf.data)),
        structure=sample,
    )


def decompress(blob: bytes, model: ScalableCodec) -> DecompressResult:
    cfg = model.config
    header, payload_z, payload_y = bitstream.unpack(blob, cfg.latent_channels)
    hp = -(-header.height // 64) * 64
    wp = -(-header.width // 64) * 64
    y_h, y_w = hp // 16, wp // 16
    z_h, z_w = hp // 64, wp // 64
    amin, amax = cfg.alphabet_min, cfg.alphabet_max
    m = cfg.latent_channels

    from .structure_inter import InterChoice

    hs_idx, gs_idx, merge_idx = header.gen_choices
    n = cfg.num_variants
    for name, idx in (("hyper_synthesis", hs_idx), ("synthesis", gs_idx), ("merge", merge_idx)):
        if idx >= n:
            raise ValueError(f"{name} variant {idx} out of range for this model")
    topo = TopologyField.from_tile(header.tile, header.s_intra, y_h, y_w)

    z_freqs = factorized_freq_table(model.z_prior, amin, amax)
    z_cdfs = rans.cumulative_freqs(z_freqs)
    z_ids = _z_order_ids(m, z_h, z_w)
    z_decoder = rans.IndexedDecoder(rans.CodedBuffer.from_bytes(payload_z))
    z_syms = z_decoder.decode(z_cdfs, z_ids)
    z_hat = torch.from_numpy(z_syms.reshape(m, z_h, z_w) + amin).float().unsqueeze(0)

    hs_choice = InterChoice.one_hot("hyper_synthesis", hs_idx, n)
    merge_choice = InterChoice.one_hot("merge", merge_idx, n)
    gs_choice = InterChoice.one_hot("synthesis", gs_idx, n)

    with torch.no_grad():
        hyper = model.h_s(z_hat, hs_choice)

        stage_map = _channel_stage_map(topo, m)
        order = _stage_order(stage_map)
        stages = sorted(np.unique(stage_map))
        y_hat = torch.zeros(1, m, y_h, y_w)
        y_flat = y_hat.view(-1)
        decoder = rans.IndexedDecoder(rans.CodedBuffer.from_bytes(payload_y))
        cursor = 0
        stages_executed = 0
        stage_sizes = {s: int((stage_map == s).sum()) for s in stages}
        for s in stages:
            mean, scale = model.cond(hyper, y_hat, topo, merge_choice)
            stages_executed += 1
            count = stage_sizes[s]
            node_idx = order[cursor:cursor + count]
            mean_np = mean[0].double().numpy().ravel()[node_idx]
            scale_np = scale[0].double().numpy().ravel()[node_idx]
            freqs = gaussian_freq_table(mean_np, scale_np, amin, amax)
            cdfs = rans.cumulative_freqs(freqs)
            syms = decoder.decode(cdfs, np.arange(count))
            y_flat[torch.from_numpy(node_idx)] = torch.from_numpy(syms + amin).float()
            cursor += count

        x_hat = model.g_s(y_hat, gs_choice).clamp(0.0, 1.0)

    image = x_hat[0, :, : header.height, : header.width]
    return DecompressResult(
        image=image,
        latents=LatentPack(y_hat=y_hat[0], z_hat=z_hat[0]),
        stages_executed=stages_executed,
    )


def count_stage_invocations(blob: bytes, model: ScalableCodec) -> int:
    """Sequential context-network invocations a decode of this stream performs."""
    header, _, _ = bitstream.unpack(blob, model.config.latent_channels)
    return int(len(torch.unique(header.tile)))
