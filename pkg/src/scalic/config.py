"""Model and training configuration.

All schedule constants and architecture sizes live here so that a checkpoint
fully determines the codec. Desk-scale defaults keep everything trainable on a
single commodity machine; the full-scale values are available by overriding
the width/channel fields.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field


# Slimmable edges, in canonical order. The last three are the generative-side
# edges whose choices travel in the bitstream header.
EDGES = ("analysis", "hyper_analysis", "hyper_synthesis", "synthesis", "merge")
GENERATIVE_EDGES = ("hyper_synthesis", "synthesis", "merge")

TASK_NAMES = ("psnr", "msssim")


def groups_for(latent_channels: int, s_intra: int) -> int:
    """Largest divisor of ``latent_channels`` that is <= ``s_intra``."""
    g = min(s_intra, latent_channels)
    while latent_channels % g != 0:
        g -= 1
    return g


@dataclass
class CodecConfig:
    latent_channels: int = 32
    width_options: tuple[int, ...] = (8, 12, 16, 24, 32)
    # hidden widths of the two interior 1x1 merge layers, one pair per variant;
    # multiples of 8 so every channel-group count up to 8 divides them
    merge_hidden_options: tuple[tuple[int, int], ...] = (
        (24, 16),
        (40, 24),
        (48, 32),
        (72, 48),
        (96, 64),
    )
    num_variants: int = 5
    s_intra: int = 4
    context_kernel: int = 5
    use_gdn: bool = True
    # topology generator
    noise_dim: int = 8
    generator_hidden: int = 64
    # entropy model
    alphabet_min: int = -64
    alphabet_max: int = 64
    sigma_min: float = 0.11
    # adaptive control
    num_levels: int = 8
    num_qualities: int = 4
    control_embed_dim: int = 16
    content_embed_dim: int = 64

    def __post_init__(self) -> None:
        if not 1 <= self.s_intra <= 16:
            raise ValueError(f"s_intra must be in [1, 16], got {self.s_intra}")
        if list(self.width_options) != sorted(self.width_options):
            raise ValueError("width_options must be ascending")
        if len(self.width_options) != self.num_variants:
            raise ValueError("width_options length must equal num_variants")
        if len(self.merge_hidden_options) != self.num_variants:
            raise ValueError("merge_hidden_options length must equal num_variants")

    @property
    def c_groups(self) -> int:
        return groups_for(self.latent_channels, self.s_intra)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        d = dict(d)
        d["width_options"] = tuple(d["width_options"])
        d["merge_hidden_options"] = tuple(tuple(p) for p in d["merge_hidden_options"])
        return cls(**d)


# distortion weights per quality index (indices 0..3, low rate -> high rate)
LAMBDA_D_PSNR = (0.0018, 0.0035, 0.0067, 0.0130)
LAMBDA_D_MSSSIM = (2.40, 4.58, 8.73, 16.64)

# complexity weights sampled during stage 2; one stored level per value
LAMBDA_C_SET = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0)


@dataclass
class TrainConfig:
    stage1_iterations: int = 40_000
    stage2_iterations: int = 10_000
    # random-topology conditioning phase at the start of stage 2 (5% of stage 2)
    warmup_iterations: int = 500
    # post-selection fine-tune of the shared weights over the stored levels
    level_finetune_iterations: int = 4_000
    # control-branch distillation steps after the levels are stored
    control_iterations: int = 1_500
    batch_size: int = 16
    crop_size: int = 64
    learning_rate: float = 1e-4
    quality: int = 0
    task: str = "psnr"
    mc_samples: int = 4
    rd_ema_decay: float = 0.98
    # Gumbel-softmax temperature anneals linearly over stage 2
    tau_start: float = 1.0
    tau_end: float = 0.2
    seed: int = 0

    def lambda_d(self) -> float:
        table = LAMBDA_D_PSNR if self.task == "psnr" else LAMBDA_D_MSSSIM
        return table[self.quality]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def parse_config_file(path: str) -> dict:
    """Parse a plain-text ``key = value`` config file.

    Lines starting with ``#`` and blank lines are ignored. Values are parsed
    as int, then float, then left as strings.
    """
    out: dict = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            for cast in (int, float):
                try:
                    out[key] = cast(value)
                    break
                except ValueError:
                    continue
            else:
                out[key] = value
    return out
