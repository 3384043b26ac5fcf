import os
import sys

import numpy as np
import pytest
import torch

sys.path.insert(0, os.path.dirname(__file__))

from scalic.config import CodecConfig, TrainConfig


def tiny_config(**overrides) -> CodecConfig:
    # narrowest width stays capacity-sufficient for the synthetic corpus so
    # complexity levels can reach matched quality
    base = dict(
        latent_channels=16,
        width_options=(8, 10, 12, 14, 16),
        merge_hidden_options=((8, 8), (16, 16), (24, 24), (32, 32), (40, 40)),
        s_intra=4,
        noise_dim=4,
        generator_hidden=16,
    )
    base.update(overrides)
    return CodecConfig(**base)


@pytest.fixture
def rng() -> torch.Generator:
    return torch.Generator().manual_seed(0)


@pytest.fixture
def np_rng() -> np.random.RandomState:
    return np.random.RandomState(0)


@pytest.fixture
def tiny_model():
    from scalic.model import ScalableCodec

    torch.manual_seed(0)
    model = ScalableCodec(tiny_config())
    model.eval()
    return model


def _desk_iters(name: str, default: int) -> int:
    return int(os.environ.get(name, default))


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """One desk-scale training run shared by the acceptance tests.

    Trains the reduced model (both stages), stores the complexity levels, and
    runs the context-variant harness. Iteration counts are environment-tunable
    (SCALIC_STAGE1_ITERS etc.) so the full desk schedule can be reproduced
    outside CI; the defaults are the reduced config sized for the test suite.
    """
    from scalic.datasets import synthetic_corpus
    from scalic.evaluation import ar_variant_harness
    from scalic.model import ScalableCodec
    from scalic.training import Trainer

    cache = os.environ.get("SCALIC_DESK_CACHE")
    if cache and os.path.exists(cache):
        from scalic.model import load_checkpoint

        payload = torch.load(cache, map_location="cpu", weights_only=False)
        model = ScalableCodec(CodecConfig.from_dict(payload["config"]))
        model.load_state_dict(payload["state_dict"])
        model.eval()
        train_cfg = TrainConfig.from_dict(payload["train_config"])
        images = synthetic_corpus(seed=7, count=24, size=128)
        trainer = __import__("scalic.training", fromlist=["Trainer"]).Trainer(
            model, train_cfg, images
        )
        return {
            "model": model,
            "trainer": trainer,
            "train_cfg": train_cfg,
            "images": images,
            "eval_images": synthetic_corpus(seed=99, count=12, size=64),
            "harness": payload["harness"],
            "checkpoint": cache,
        }

    torch.manual_seed(7)
    cfg = tiny_config()
    train_cfg = TrainConfig(
        stage1_iterations=_desk_iters("SCALIC_STAGE1_ITERS", 5000),
        stage2_iterations=_desk_iters("SCALIC_STAGE2_ITERS", 400),
        warmup_iterations=_desk_iters("SCALIC_WARMUP_ITERS", 40),
        level_finetune_iterations=_desk_iters("SCALIC_LEVEL_FINETUNE_ITERS", 1200),
        batch_size=8,
        crop_size=64,
        learning_rate=1e-3,
        quality=3,
        seed=7,
    )
    images = synthetic_corpus(seed=7, count=24, size=128)
    model = ScalableCodec(cfg)
    model.train()
    trainer = Trainer(model, train_cfg, images)
    trainer.run_stage1()
    trainer.run_stage2()
    trainer.finalize_levels()
    trainer.finetune_stored_levels(train_cfg.level_finetune_iterations)
    model.eval()
    eval_images = synthetic_corpus(seed=99, count=12, size=64)
    harness = ar_variant_harness(
        model,
        ("baseline", "learned-2", "learned-4", "learned-10"),
        images,
        eval_images,
        iterations=_desk_iters("SCALIC_HARNESS_ITERS", 600),
        train_cfg=train_cfg,
    )
    path = str(tmp_path_factory.mktemp("desk") / "desk.pt")
    if cache:
        path = cache
    from scalic.model import save_checkpoint

    save_checkpoint(
        model, path, extra={"train_config": train_cfg.to_dict(), "harness": harness}
    )
    return {
        "model": model,
        "trainer": trainer,
        "train_cfg": train_cfg,
        "images": images,
        "eval_images": eval_images,
        "harness": harness,
        "checkpoint": path,
    }
