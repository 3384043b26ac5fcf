"""Command-line interface."""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np
import torch

from .config import TASK_NAMES, CodecConfig, TrainConfig, parse_config_file


@click.group()
def main() -> None:
    """Computationally scalable learned image codec."""


def _load_model(path: str):
    from .model import load_checkpoint

    return load_checkpoint(path)


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--output", "output_path", required=True, type=click.Path())
@click.option("--budget-level", "--budget", "-b", type=click.IntRange(0, 7), default=0,
              help="complexity level 0 (max) .. 7 (min); budget cap when data-adaptive")
@click.option("--task", type=click.Choice(TASK_NAMES), default="psnr")
@click.option("--quality", type=click.IntRange(0, 3), default=0)
@click.option("--data-adaptive", is_flag=True, default=False,
              help="let the control branch pick the structure from the content")
@click.option("--seed", type=int, default=0)
def compress(model_path, input_path, output_path, budget_level, task, quality, data_adaptive, seed):
    """Compress an image to a .abc stream."""
    from .codec import compress as run_compress
    from .control import ControllerState
    from .datasets import load_image

    model = _load_model(model_path)
    image = load_image(input_path)
    controller = ControllerState(
        budget_index=budget_level,
        task_index=TASK_NAMES.index(task),
        quality_index=quality,
        data_adaptive=data_adaptive,
    )
    rng = torch.Generator().manual_seed(seed)
    result = run_compress(image, model, controller, rng=rng)
    Path(output_path).write_bytes(result.blob)
    num_pixels = image.shape[-2] * image.shape[-1]
    click.echo(
        f"{input_path} -> {output_path}: {len(result.blob)} bytes, "
        f"{len(result.blob) * 8 / num_pixels:.4f} bpp"
    )


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--output", "output_path", required=True, type=click.Path())
def decompress(model_path, input_path, output_path):
    """Decompress a .abc stream to an image."""
    from .codec import decompress as run_decompress
    from .datasets import save_image

    model = _load_model(model_path)
    result = run_decompress(Path(input_path).read_bytes(), model)
    save_image(result.image, output_path)
    click.echo(f"{input_path} -> {output_path} ({result.stages_executed} decode stages)")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="plain-text key = value file overriding schedule constants")
@click.option("--stage", type=click.IntRange(1, 2), required=True)
@click.option("--resume", "resume_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--corpus", type=click.Path(exists=True), default=None,
              help="image folder; defaults to the synthetic corpus")
@click.option("--log-every", type=int, default=200)
def train(config_path, stage, resume_path, out_path, corpus, log_every):
    """Run one optimization stage and write a checkpoint."""
    from .datasets import ingest_dataset, synthetic_corpus
    from .model import ScalableCodec, load_checkpoint
    from .training import Trainer

    overrides = parse_config_file(config_path) if config_path else {}
    codec_keys = {f.name for f in CodecConfig.__dataclass_fields__.values()}
    train_keys = {f.name for f in TrainConfig.__dataclass_fields__.values()}
    codec_cfg = CodecConfig(**{k: v for k, v in overrides.items() if k in codec_keys})
    train_cfg = TrainConfig(**{k: v for k, v in overrides.items() if k in train_keys})
    unknown = set(overrides) - codec_keys - train_keys
    if unknown:
        raise click.UsageError(f"unknown config keys: {sorted(unknown)}")

    model = load_checkpoint(resume_path) if resume_path else ScalableCodec(codec_cfg)
    model.train()
    if corpus:
        images = [img for _, img in ingest_dataset(corpus)]
    else:
        images = synthetic_corpus(seed=train_cfg.seed, count=24, size=2 * train_cfg.crop_size)
    trainer = Trainer(model, train_cfg, images)
    if stage == 1:
        trainer.run_stage1(log_every=log_every)
    else:
        if resume_path is None:
            raise click.UsageError("stage 2 requires --resume with a stage-1 checkpoint")
        trainer.run_stage2(log_every=log_every)
        trainer.finalize_levels()
        trainer.finetune_stored_levels(train_cfg.level_finetune_iterations, log_every=log_every)
    trainer.save(out_path)
    click.echo(f"saved checkpoint to {out_path}")


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--level", type=click.IntRange(0, 7), default=0)
@click.option("--size", default="256x256", help="image size HxW")
def report(model_path, level, size):
    """Per-edge MAC table (CSV: edge, variant, macs) for a stored level."""
    from .complexity import pipeline_report
    from .config import EDGES

    model = _load_model(model_path)
    h, w = (int(v) for v in size.lower().split("x"))
    indices = {e: int(model.stored_inter[level, i]) for i, e in enumerate(EDGES)}
    rep = pipeline_report(model, indices, h, w)
    click.echo("edge,variant,macs")
    for edge, macs in rep.per_edge.items():
        click.echo(f"{edge},{indices[edge]},{macs}")
    click.echo(f"context,-,{rep.context}")
    click.echo(f"total,-,{rep.total}")
    click.echo(f"# {rep.kmacs_per_pixel:.2f} kMACs/pixel, ratio {rep.ratio:.3f}", err=True)


@main.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--levels", default="0..7", help="e.g. 0..7 or 0,3,7")
@click.option("--quality", type=click.IntRange(0, 3), default=0)
@click.option("--task", type=click.Choice(TASK_NAMES), default="psnr")
@click.option("--out", "out_path", required=True, type=click.Path())
def eval_cmd(model_path, dataset_path, levels, quality, task, out_path):
    """Rate/quality/complexity sweep over a dataset; writes a CSV."""
    from .datasets import ingest_dataset
    from .evaluation import evaluate_dataset, write_csv

    model = _load_model(model_path)
    if ".." in levels:
        lo, hi = levels.split("..")
        level_list = list(range(int(lo), int(hi) + 1))
    else:
        level_list = [int(v) for v in levels.split(",")]
    rows = evaluate_dataset(
        model, list(ingest_dataset(dataset_path)), level_list,
        quality=quality, task=TASK_NAMES.index(task),
    )
    write_csv(rows, out_path)
    click.echo(f"wrote {len(rows)} rows to {out_path}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def plot(in_path, out_path):
    """Plot an eval CSV (and write the plotted points next to it)."""
    import csv as csv_mod

    from .evaluation import plot_rd

    with open(in_path, newline="") as f:
        rows = list(csv_mod.DictReader(f))
    csv_path = plot_rd(rows, out_path)
    click.echo(f"wrote {out_path} and {csv_path}")


@main.command("coder-fixture")
@click.option("--seed", type=int, default=1234)
@click.option("--count", type=int, default=10_000)
@click.option("--out", "out_path", required=True, type=click.Path())
def coder_fixture(seed, count, out_path):
    """Emit a coder cross-check fixture (symbols, tables, expected bytes).

    The native coder's test suite replays this fixture and must produce
    byte-identical output.
    """
    import json

    from . import rans

    rng = np.random.RandomState(seed)
    num_tables = 8
    alphabet = 129
    freqs = []
    for t in range(num_tables):
        scale = rng.uniform(2.0, 30.0)
        centers = np.arange(alphabet) - alphabet // 2
        pmf = np.exp(-0.5 * (centers / scale) ** 2)
        from .entropy import quantize_pmf_to_freqs

        freqs.append(quantize_pmf_to_freqs(pmf / pmf.sum()))
    freq_matrix = np.stack(freqs)
    cdfs = rans.cumulative_freqs(freq_matrix)
    table_ids = rng.randint(0, num_tables, size=count)
    symbols = np.empty(count, dtype=np.int64)
    for t in range(num_tables):
        mask = table_ids == t
        pmf = freq_matrix[t] / freq_matrix[t].sum()
        symbols[mask] = rng.choice(alphabet, size=int(mask.sum()), p=pmf)
    buf = rans.encode_indexed(symbols, cdfs, table_ids)
    fixture = {
        "seed": seed,
        "precision": rans.PRECISION,
        "freqs": freq_matrix.tolist(),
        "table_ids": table_ids.tolist(),
        "symbols": symbols.tolist(),
        "encoded_hex": buf.to_bytes().hex(),
    }
    Path(out_path).write_text(json.dumps(fixture))
    click.echo(f"wrote fixture with {count} symbols to {out_path}")


if __name__ == "__main__":
    sys.exit(main())
