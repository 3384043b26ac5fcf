"""scalic: a computationally scalable learned image codec.

The codec learns which width variant implements each transform edge and which
parallel decoding order governs the latent elements, controls both by device
budget, content, and task, and writes a real entropy-coded bitstream whose
decoder runs one parallel stage per partite.
"""

from .config import CodecConfig, TrainConfig
from .control import ControllerState, StructureSample
from .model import ScalableCodec, load_checkpoint, save_checkpoint
from .codec import compress, decompress, count_stage_invocations
from .structure_intra import TopologyField, decode_schedule

__all__ = [
    "CodecConfig",
    "TrainConfig",
    "ControllerState",
    "StructureSample",
    "ScalableCodec",
    "TopologyField",
    "compress",
    "decompress",
    "count_stage_invocations",
    "decode_schedule",
    "load_checkpoint",
    "save_checkpoint",
]

__version__ = "0.1.0"
