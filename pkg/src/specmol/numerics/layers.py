"""Layer primitives shared by both encoders.

Weights use the row convention throughout: a linear map is stored as an
(input_dim, output_dim) matrix and applied as ``y = x @ W + b``. Padding
masks are plain boolean numpy arrays marking real (unmasked) positions.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .params import ParameterStore
from .tensor import (
    AllMaskedError,
    ShapeMismatchError,
    Tensor,
    add,
    batched_matmul,
    gelu,
    layer_norm,
    masked_softmax_last,
    matmul,
    mul,
    relu,
    reshape,
    transpose,
)

LAYER_NORM_EPS = 1e-5
FFN_FACTOR = 4

_ACTIVATIONS = {"gelu": gelu, "relu": relu}


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: x @ weight (+ bias)."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatchError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if x.ndim == 2:
        y = matmul(x, weight)
    else:
        lead = x.shape[:-1]
        flat = reshape(x, (int(np.prod(lead)), x.shape[-1]))
        y = reshape(matmul(flat, weight), lead + (weight.shape[1],))
    if bias is not None:
        y = add(y, bias)
    return y


def _adapted_linear(x: Tensor, weight: Tensor, bias: Tensor | None, adapter) -> Tensor:
    """Base linear map plus an optional low-rank delta (duck-typed adapter
    with ``down``, ``up`` Tensors and a float ``scale``)."""
    y = linear(x, weight, bias)
    if adapter is not None:
        delta = linear(linear(x, adapter.down), adapter.up)
        y = add(y, mul(delta, Tensor(adapter.scale)))
    return y


def attention_core(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray, n_heads: int) -> Tensor:
    """Scaled dot-product attention over pre-projected q/k/v of shape
    [batch, length, d]. Masked key positions receive -inf scores and
    contribute nothing; masked query rows are zeroed in the output."""
    b, length, d = q.shape
    if d % n_heads:
        raise ShapeMismatchError(f"model dim {d} is not divisible by {n_heads} heads")
    if mask.shape != (b, length):
        raise ShapeMismatchError(f"mask shape {mask.shape} does not match sequences {(b, length)}")
    if not mask.any(axis=1).all():
        raise AllMaskedError("a sequence in the batch is fully masked")
    d_head = d // n_heads

    def to_heads(t: Tensor) -> Tensor:
        return transpose(reshape(t, (b, length, n_heads, d_head)), (0, 2, 1, 3))

    qh, kh, vh = to_heads(q), to_heads(k), to_heads(v)
    scores = batched_matmul(qh, transpose(kh, (0, 1, 3, 2)))
    scores = mul(scores, Tensor(1.0 / np.sqrt(d_head)))
    weights = masked_softmax_last(scores, mask[:, None, None, :])
    heads = batched_matmul(weights, vh)
    out = reshape(transpose(heads, (0, 2, 1, 3)), (b, length, d))
    return mul(out, Tensor(mask[:, :, None].astype(np.float64)))


def multi_head_attention(
    x: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    mask: np.ndarray,
    n_heads: int,
    bq: Tensor | None = None,
    bk: Tensor | None = None,
    bv: Tensor | None = None,
    bo: Tensor | None = None,
) -> Tensor:
    """Multi-head self-attention over one sequence x of shape [L, d].

    Heads are the contiguous (d / n_heads)-column slices of the combined
    projection matrices. Output rows at masked positions are zero, so the
    result never depends on the values stored at masked positions.
    """
    length, d = x.shape
    mask = np.asarray(mask, dtype=bool)
    x3 = reshape(x, (1, length, d))
    q = linear(x3, wq, bq)
    k = linear(x3, wk, bk)
    v = linear(x3, wv, bv)
    out = attention_core(q, k, v, mask[None, :], n_heads)
    y = linear(out, wo, bo)
    y = mul(y, Tensor(mask[None, :, None].astype(np.float64)))
    return reshape(y, (length, d))


def feed_forward(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor, activation: str) -> Tensor:
    return linear(_ACTIVATIONS[activation](linear(x, w1, b1)), w2, b2)


class EncoderBlock:
    """Pre-norm transformer block: x + Attn(LN(x)), then x + FFN(LN(x)).

    Optional low-rank adapters on the q/k/v projections are applied on top
    of the base weights; the base weights themselves stay whatever the
    constructor registered them as (trainable or frozen).
    """

    def __init__(
        self,
        store: ParameterStore,
        prefix: str,
        d_model: int,
        n_heads: int,
        rng: np.random.Generator,
        activation: str = "gelu",
        trainable: bool = True,
        adapters: Mapping[str, object] | None = None,
    ):
        if d_model % n_heads:
            raise ShapeMismatchError(f"model dim {d_model} is not divisible by {n_heads} heads")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.n_heads = n_heads
        self.activation = activation
        self.adapters = dict(adapters) if adapters else {}
        d_ff = FFN_FACTOR * d_model
        scale = 1.0 / np.sqrt(d_model)

        def weight(name: str, shape: tuple[int, ...], std: float) -> Tensor:
            return store.create(f"{prefix}.{name}", rng.normal(0.0, std, size=shape), trainable)

        def zeros(name: str, dim: int) -> Tensor:
            return store.create(f"{prefix}.{name}", np.zeros(dim), trainable)

        def ones(name: str, dim: int) -> Tensor:
            return store.create(f"{prefix}.{name}", np.ones(dim), trainable)

        self.ln1_gain, self.ln1_bias = ones("ln1.gain", d_model), zeros("ln1.bias", d_model)
        self.wq, self.bq = weight("attn.wq", (d_model, d_model), scale), zeros("attn.bq", d_model)
        self.wk, self.bk = weight("attn.wk", (d_model, d_model), scale), zeros("attn.bk", d_model)
        self.wv, self.bv = weight("attn.wv", (d_model, d_model), scale), zeros("attn.bv", d_model)
        self.wo, self.bo = weight("attn.wo", (d_model, d_model), scale), zeros("attn.bo", d_model)
        self.ln2_gain, self.ln2_bias = ones("ln2.gain", d_model), zeros("ln2.bias", d_model)
        self.ffn_w1, self.ffn_b1 = weight("ffn.w1", (d_model, d_ff), scale), zeros("ffn.b1", d_ff)
        self.ffn_w2, self.ffn_b2 = weight("ffn.w2", (d_ff, d_model), 1.0 / np.sqrt(d_ff)), zeros("ffn.b2", d_model)

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        xn = layer_norm(x, self.ln1_gain, self.ln1_bias, LAYER_NORM_EPS)
        q = _adapted_linear(xn, self.wq, self.bq, self.adapters.get("q"))
        k = _adapted_linear(xn, self.wk, self.bk, self.adapters.get("k"))
        v = _adapted_linear(xn, self.wv, self.bv, self.adapters.get("v"))
        attn = attention_core(q, k, v, mask, self.n_heads)
        attn = linear(attn, self.wo, self.bo)
        attn = mul(attn, Tensor(mask[:, :, None].astype(np.float64)))
        x = add(x, attn)
        xn = layer_norm(x, self.ln2_gain, self.ln2_bias, LAYER_NORM_EPS)
        return add(x, feed_forward(xn, self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2, self.activation))
