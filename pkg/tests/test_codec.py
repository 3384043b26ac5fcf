import numpy as np
import pytest
import torch

from scalic.codec import (
    compress,
    compress_given_structure,
    count_stage_invocations,
    decompress,
    pad_to_multiple,
)
from scalic.control import ControllerState
from scalic.datasets import synthetic_corpus


@pytest.fixture(scope="module")
def model():
    from conftest import tiny_config
    from scalic.model import ScalableCodec

    torch.manual_seed(0)
    m = ScalableCodec(tiny_config())
    m.eval()
    return m


class TestPadding:
    def test_already_aligned_untouched(self):
        x = torch.rand(1, 3, 64, 128)
        assert pad_to_multiple(x) is x

    def test_pads_up_and_records(self, model):
        x = torch.rand(3, 70, 90)
        res = compress(x, model, ControllerState(budget_index=0))
        rec = decompress(res.blob, model)
        assert rec.image.shape == (3, 70, 90)


class TestRoundTrip:
    def test_latents_bit_exact(self, model, rng):
        x = torch.rand(3, 64, 64, generator=rng)
        res = compress(x, model, ControllerState(budget_index=3))
        rec = decompress(res.blob, model)
        assert torch.equal(res.latents.y_hat, rec.latents.y_hat)
        assert torch.equal(res.latents.z_hat, rec.latents.z_hat)

    def test_deterministic_reconstruction(self, model, rng):
        x = torch.rand(3, 64, 64, generator=rng)
        res = compress(x, model, ControllerState(budget_index=0))
        a = decompress(res.blob, model)
        b = decompress(res.blob, model)
        assert torch.equal(a.image, b.image)

    def test_all_black_cheaper_than_noise(self, model):
        black = torch.zeros(3, 64, 64)
        noise = torch.rand(3, 64, 64, generator=torch.Generator().manual_seed(1))
        c = ControllerState(budget_index=0)
        assert compress(black, model, c).payload_bits <= compress(noise, model, c).payload_bits

    def test_estimated_close_to_payload(self, model, rng):
        x = torch.rand(3, 64, 64, generator=rng)
        res = compress(x, model, ControllerState(budget_index=0))
        assert abs(res.estimated_bits - res.payload_bits) <= 0.05 * res.payload_bits + 64

    def test_header_fraction_small_at_256(self, model):
        imgs = synthetic_corpus(seed=3, count=1, size=256)
        res = compress(imgs[0], model, ControllerState(budget_index=0))
        assert res.header_bits / (len(res.blob) * 8) < 0.01

    def test_both_tasks_round_trip(self, model, rng):
        x = torch.rand(3, 64, 64, generator=rng)
        for task in (0, 1):
            res = compress(x, model, ControllerState(budget_index=5, task_index=task))
            rec = decompress(res.blob, model)
            assert torch.equal(res.latents.y_hat, rec.latents.y_hat)

    def test_truncated_stream_no_partial_image(self, model, rng):
        x = torch.rand(3, 64, 64, generator=rng)
        res = compress(x, model, ControllerState(budget_index=0))
        with pytest.raises(ValueError):
            decompress(res.blob[:-3], model)


class TestStages:
    def test_stage_count_matches_distinct_labels(self, model, rng):
        x = torch.rand(3, 64, 64, generator=rng)
        res = compress(x, model, ControllerState(budget_index=0))
        rec = decompress(res.blob, model)
        distinct = len(torch.unique(res.structure.topo.tile))
        assert rec.stages_executed == distinct
        assert count_stage_invocations(res.blob, model) == distinct

    def test_single_partite_single_stage(self, model, rng):
        from scalic.config import EDGES

        x = torch.rand(3, 64, 64, generator=rng)
        builder = model.fixed_structure(
            {e: 0 for e in EDGES}, torch.zeros(1, 2, 2, dtype=torch.long), s_intra=1
        )
        res = compress_given_structure(x, model, builder.at(4, 4))
        rec = decompress(res.blob, model)
        assert rec.stages_executed == 1
        assert torch.equal(res.latents.y_hat, rec.latents.y_hat)

    def test_checkerboard_two_stages(self, model, rng):
        from scalic.config import EDGES
        from scalic.evaluation import handcrafted_tile

        tile, s = handcrafted_tile("checkerboard", model.config.latent_channels)
        x = torch.rand(3, 64, 64, generator=rng)
        builder = model.fixed_structure({e: 1 for e in EDGES}, tile, s_intra=s)
        res = compress_given_structure(x, model, builder.at(4, 4))
        rec = decompress(res.blob, model)
        assert rec.stages_executed == 2
        assert torch.equal(res.latents.y_hat, rec.latents.y_hat)

    def test_ten_partite_bound(self, model, rng):
        from scalic.config import EDGES

        tile = torch.arange(8 * 4).view(8, 2, 2) % 10
        x = torch.rand(3, 64, 64, generator=rng)
        builder = model.fixed_structure({e: 2 for e in EDGES}, tile, s_intra=10)
        res = compress_given_structure(x, model, builder.at(4, 4))
        rec = decompress(res.blob, model)
        assert rec.stages_executed <= 10
        assert torch.equal(res.latents.y_hat, rec.latents.y_hat)


class TestDecodeOrderAudit:
    def test_symbols_never_precede_ancestors(self, model, rng):
        # along the coded order, a node's strictly-smaller-labeled ancestors
        # always appear earlier
        from scalic.codec import _channel_stage_map, _stage_order
        from scalic.structure_intra import random_topology

        topo = random_topology(model.config.c_groups, 4, 4, 4, rng=rng)
        stage_map = _channel_stage_map(topo, model.config.latent_channels)
        order = _stage_order(stage_map)
        labels_in_order = stage_map.ravel()[order]
        # nondecreasing labels along the coded order means every strictly
        # smaller-labeled ancestor of a node is decoded before it
        assert (np.diff(labels_in_order) >= 0).all()
        assert len(order) == stage_map.size == len(np.unique(order))


class TestControllerPlumbing:
    def test_every_level_round_trips(self, model, rng):
        x = torch.rand(3, 64, 64, generator=rng)
        for level in range(model.config.num_levels):
            res = compress(x, model, ControllerState(budget_index=level))
            rec = decompress(res.blob, model)
            assert torch.equal(res.latents.y_hat, rec.latents.y_hat), f"level {level}"

    def test_data_adaptive_round_trip(self, model, rng):
        x = torch.rand(3, 64, 64, generator=rng)
        c = ControllerState(budget_index=4, data_adaptive=True)
        res = compress(x, model, c, rng=rng)
        rec = decompress(res.blob, model)
        assert torch.equal(res.latents.y_hat, rec.latents.y_hat)

    def test_invalid_controller_rejected(self, model):
        with pytest.raises(ValueError):
            compress(torch.rand(3, 64, 64), model, ControllerState(budget_index=12))

    def test_pixel_range_enforced(self, model):
        with pytest.raises(ValueError, match="pixel"):
            compress(torch.rand(3, 64, 64) * 3.0, model, ControllerState(budget_index=0))
