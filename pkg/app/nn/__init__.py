from app.nn.tensor import Tape, Tensor
from app.nn.params import ParamEntry, Params, sgd_step
from app.nn.ops import (
    affine,
    concat,
    conv2d,
    cross_entropy_loss,
    dropout,
    flatten,
    maxpool2d,
    relu,
    reshape,
    select,
    softmax,
    stack,
    weighted_sum,
)
from app.nn.gradcheck import finite_difference_check
from app.nn.serialization import decode_tensor, encode_tensor, read_tensor, write_tensor

__all__ = [
    "Tape",
    "Tensor",
    "ParamEntry",
    "Params",
    "sgd_step",
    "affine",
    "concat",
    "conv2d",
    "cross_entropy_loss",
    "dropout",
    "flatten",
    "maxpool2d",
    "relu",
    "reshape",
    "select",
    "softmax",
    "stack",
    "weighted_sum",
    "finite_difference_check",
    "decode_tensor",
    "encode_tensor",
    "read_tensor",
    "write_tensor",
]
