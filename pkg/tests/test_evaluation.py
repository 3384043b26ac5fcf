import csv

import pytest
import torch

from scalic.datasets import synthetic_corpus
from scalic.evaluation import (
    CSV_COLUMNS,
    RDPoint,
    evaluate_dataset,
    evaluate_image,
    handcrafted_tile,
    plot_rd,
    write_csv,
)


class TestRDPoint:
    def test_valid(self):
        RDPoint(bpp=0.5, psnr=30.0, msssim=0.9, macs=100.0, level=0, quality=0)

    def test_rejects_empty_stream(self):
        with pytest.raises(ValueError):
            RDPoint(bpp=0.0, psnr=30.0, msssim=0.9, macs=1.0, level=0, quality=0)

    def test_rejects_nan_psnr(self):
        with pytest.raises(ValueError):
            RDPoint(bpp=0.5, psnr=float("nan"), msssim=0.9, macs=1.0, level=0, quality=0)


class TestHandcrafted:
    def test_baseline_single_partite(self):
        tile, s = handcrafted_tile("baseline", 16)
        assert s == 1 and tile.max() == 0

    def test_checkerboard_pattern(self):
        tile, s = handcrafted_tile("checkerboard", 16)
        assert s == 2
        assert torch.equal(tile[0], torch.tensor([[0, 1], [1, 0]]))

    def test_channelwise_spatially_uniform(self):
        tile, s = handcrafted_tile("channelwise", 16)
        assert s == 2
        assert (tile[0] == 0).all() and (tile[1] == 1).all()

    def test_unknown_name(self):
        with pytest.raises(KeyError):
            handcrafted_tile("zigzag", 16)


class TestHarnessRows:
    def test_evaluate_image_row(self, tiny_model):
        img = synthetic_corpus(seed=1, count=1, size=64)[0]
        row = evaluate_image(tiny_model, "img0", img, level=0)
        assert set(CSV_COLUMNS) <= set(row)
        assert row["bpp"] > 0
        assert 1 <= row["stages"] <= tiny_model.config.s_intra

    def test_csv_and_plot_outputs(self, tiny_model, tmp_path):
        imgs = [("a.png", synthetic_corpus(seed=2, count=1, size=64)[0])]
        rows = evaluate_dataset(tiny_model, imgs, levels=[0, 7])
        out = tmp_path / "results.csv"
        write_csv(rows, str(out))
        with open(out) as f:
            parsed = list(csv.DictReader(f))
        assert len(parsed) == 2
        fig = tmp_path / "fig.png"
        side_csv = plot_rd(parsed, str(fig))
        # every plot also writes the underlying CSV
        assert fig.exists() and side_csv.endswith(".csv")
        with open(side_csv) as f:
            agg = list(csv.DictReader(f))
        assert {int(r["level"]) for r in agg} == {0, 7}
