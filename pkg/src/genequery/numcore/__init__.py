"""Dense tensors, reverse-mode autodiff, transformer primitives and Adam."""

from .nn import block_params, init_block, layer_norm, multi_head_attention, softmax, transformer_block
from .optim import AdamState, adam_step, grad_check
from .params import ParamStore, init_weight
from .prng import SplitMix, derive_seed, fnv1a64
from .tensor import Tensor, as_tensor

__all__ = [
    "AdamState",
    "ParamStore",
    "SplitMix",
    "Tensor",
    "adam_step",
    "as_tensor",
    "block_params",
    "derive_seed",
    "fnv1a64",
    "grad_check",
    "init_block",
    "init_weight",
    "layer_norm",
    "multi_head_attention",
    "softmax",
    "transformer_block",
]
