"""Hand-set transformer programs: weight-level IR, reference interpreter, recipes and oracles."""
from .ir import (
    AttentionSpec, FfnSpec, LayerNormSpec, LayerSpec, OutputHead, PosEnc, StreamLayout,
    TransformerSpec, deserialize, embed, load_spec, save_spec, serialize,
)
from .interpreter import forward, run, run_batch
from .programs import build_dyck, build_induction, decide

__version__ = "0.1.0"

__all__ = [
    "AttentionSpec", "FfnSpec", "LayerNormSpec", "LayerSpec", "OutputHead", "PosEnc",
    "StreamLayout", "TransformerSpec", "build_dyck", "build_induction", "decide", "deserialize",
    "embed", "forward", "load_spec", "run", "run_batch", "save_spec", "serialize",
]
