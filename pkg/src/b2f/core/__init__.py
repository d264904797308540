from .gradcheck import grad_check
from .ops import (
    DTYPE,
    ShapeError,
    attention_weights,
    conv1d_k3p1,
    gumbel_softmax,
    l2_normalize,
    layer_norm,
    linear,
    multi_head_attention,
    sinusoidal_pe,
)
from .rng import RngState

__all__ = [
    "DTYPE",
    "RngState",
    "ShapeError",
    "attention_weights",
    "conv1d_k3p1",
    "grad_check",
    "gumbel_softmax",
    "l2_normalize",
    "layer_norm",
    "linear",
    "multi_head_attention",
    "sinusoidal_pe",
]
