"""Minimal dense float64 tensor engine with reverse-mode differentiation,
the layer primitives both encoders share, an adaptive-moment optimizer,
and binary parameter serialization."""

from .tensor import (  # noqa: F401
    AllMaskedError,
    NonFiniteInputError,
    NonScalarLossError,
    ShapeMismatchError,
    Tensor,
    add,
    backward,
    batched_matmul,
    concat,
    gather_rows,
    gelu,
    l2_normalize_rows,
    layer_norm,
    logsumexp_rows,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    select_index,
    softmax_rows,
    sub,
    take_diag,
    tensor_sum,
    transpose,
)
from .layers import EncoderBlock, attention_core, feed_forward, linear, multi_head_attention  # noqa: F401
from .params import ParameterStore  # noqa: F401
from .optim import MissingGradError, OptimizerState, optimizer_step  # noqa: F401
from .serialize import CheckpointFormatError, dump_arrays, load_arrays  # noqa: F401
from .gradcheck import finite_difference_check, max_relative_error  # noqa: F401
