"""Central finite-difference verification of every differentiable path.

``finite_difference_check`` is the single-tensor oracle; the registry at
the bottom wires every primitive plus both full encoder-through-loss
paths into one runnable suite (the CLI ``gradcheck`` command and the
acceptance tests both run it).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..seeding import substream
from .layers import EncoderBlock, linear, multi_head_attention
from .params import ParameterStore
from .tensor import (
    Tensor,
    backward,
    batched_matmul,
    concat,
    gather_rows,
    gelu,
    l2_normalize_rows,
    layer_norm,
    logsumexp_rows,
    masked_softmax_last,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    select_index,
    softmax_rows,
    take_diag,
    tensor_sum,
    transpose,
)

TOLERANCE = 1e-4
DEFAULT_STEP = 1e-5


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / denom).max()) if analytic.size else 0.0


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = DEFAULT_STEP) -> float:
    """Max over coordinates of the relative error between the reverse-mode
    gradient of ``f`` at ``x`` and central differences with ``step``."""
    x.requires_grad = True
    x.grad = None
    backward(f(x))
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    numeric_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            f_plus = f(x).item()
            flat[i] = original - step
            f_minus = f(x).item()
            flat[i] = original
            numeric_flat[i] = (f_plus - f_minus) / (2.0 * step)
    return max_relative_error(analytic, numeric)


def check_function(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = DEFAULT_STEP,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    fault: bool = False,
) -> float:
    """Finite-difference check of a closure against several parameter
    tensors at once. ``max_coords`` subsamples coordinates per tensor for
    large parameter sets; ``fault`` deliberately corrupts the analytic
    gradient (negative-control hook for the CLI)."""
    for p in params:
        p.grad = None
    backward(f())
    worst = 0.0
    with no_grad():
        for p in params:
            analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
            if fault:
                analytic = analytic * 1.01 + 1e-3
            flat = p.data.reshape(-1)
            analytic_flat = analytic.reshape(-1)
            if max_coords is not None and flat.size > max_coords:
                assert rng is not None
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            else:
                coords = np.arange(flat.size)
            for i in coords:
                original = flat[i]
                flat[i] = original + step
                f_plus = f().item()
                flat[i] = original - step
                f_minus = f().item()
                flat[i] = original
                numeric = (f_plus - f_minus) / (2.0 * step)
                denom = max(1.0, abs(analytic_flat[i]), abs(numeric))
                worst = max(worst, abs(analytic_flat[i] - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# Registered checks
# ---------------------------------------------------------------------------


def _rand(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0, size=shape), requires_grad=True)


def _weighted_sum(t: Tensor, rng: np.random.Generator) -> Tensor:
    return tensor_sum(mul(t, Tensor(rng.normal(0.0, 1.0, size=t.shape))))


def _check_matmul(rng, fault):
    a, b = _rand(rng, 5, 4), _rand(rng, 4, 6)
    return check_function(lambda: _weighted_sum(matmul(a, b), rng), [a, b], fault=fault)


def _check_batched_matmul(rng, fault):
    a, b = _rand(rng, 2, 3, 4, 5), _rand(rng, 2, 3, 5, 4)
    return check_function(lambda: _weighted_sum(batched_matmul(a, b), rng), [a, b], fault=fault)


def _check_add_mul_broadcast(rng, fault):
    x, bias, s = _rand(rng, 4, 6), _rand(rng, 6), _rand(rng, 1)
    return check_function(lambda: _weighted_sum(mul(x + bias, s), rng), [x, bias, s], fault=fault)


def _check_gelu(rng, fault):
    x = _rand(rng, 5, 5)
    return check_function(lambda: _weighted_sum(gelu(x), rng), [x], fault=fault)


def _check_relu(rng, fault):
    x = _rand(rng, 5, 5)
    return check_function(lambda: _weighted_sum(relu(x), rng), [x], fault=fault)


def _check_softmax_rows(rng, fault):
    x = _rand(rng, 6, 5)
    return check_function(lambda: _weighted_sum(softmax_rows(x), rng), [x], fault=fault)


def _check_masked_softmax(rng, fault):
    x = _rand(rng, 2, 4, 6)
    mask = rng.random((2, 1, 6)) < 0.7
    mask[..., 0] = True
    return check_function(lambda: _weighted_sum(masked_softmax_last(x, mask), rng), [x], fault=fault)


def _check_layer_norm(rng, fault):
    x, gain, bias = _rand(rng, 4, 7), _rand(rng, 7), _rand(rng, 7)
    return check_function(lambda: _weighted_sum(layer_norm(x, gain, bias, 1e-5), rng), [x, gain, bias], fault=fault)


def _check_l2_normalize(rng, fault):
    x = Tensor(rng.normal(0.0, 1.0, size=(5, 6)) + 0.5, requires_grad=True)
    return check_function(lambda: _weighted_sum(l2_normalize_rows(x), rng), [x], fault=fault)


def _check_logsumexp(rng, fault):
    x = _rand(rng, 5, 7)
    return check_function(lambda: _weighted_sum(logsumexp_rows(x), rng), [x], fault=fault)


def _check_structural(rng, fault):
    x = _rand(rng, 6, 6)
    table = _rand(rng, 7, 4)
    ids = rng.integers(0, 7, size=(3, 5))
    filler = Tensor(rng.normal(size=(3, 2)))

    def f():
        diag = take_diag(x)
        moved = transpose(reshape(x, (2, 3, 6)), (1, 0, 2))
        row = select_index(moved, 1, axis=0)
        gathered = gather_rows(table, ids)
        pieces = concat([mean(gathered, axis=1), filler], axis=1)
        return tensor_sum(diag) + _weighted_sum(row, rng) + _weighted_sum(pieces, rng)

    return check_function(f, [x, table], fault=fault)


def _check_attention(rng, fault):
    d, heads, length = 8, 2, 5
    x = _rand(rng, length, d)
    weights = [_rand(rng, d, d) for _ in range(4)]
    biases = [_rand(rng, d) for _ in range(4)]
    mask = np.array([True, True, True, False, True])

    def f():
        out = multi_head_attention(x, *weights, mask, heads, *biases)
        return _weighted_sum(out, rng)

    return check_function(f, [x, *weights, *biases], fault=fault)


def _check_encoder_block(rng, fault):
    store = ParameterStore()
    block = EncoderBlock(store, "blk", d_model=8, n_heads=2, rng=rng)
    x = _rand(rng, 2, 4, 8)
    mask = np.ones((2, 4), dtype=bool)
    mask[1, 3] = False
    params = [store[p] for p in store.trainable_paths()]

    def f():
        return _weighted_sum(block.forward(x, mask), rng)

    return check_function(f, [x, *params], fault=fault, max_coords=8, rng=rng)


def _check_lora_linear(rng, fault):
    from ..molecular import LoraAdapter, lora_linear

    d, r = 6, 2
    base = Tensor(rng.normal(size=(d, d)))
    adapter = LoraAdapter(
        down=Tensor(rng.normal(0, 0.1, size=(d, r)), requires_grad=True),
        up=Tensor(rng.normal(0, 0.1, size=(r, d)), requires_grad=True),
        rank=r,
        scale=1.0,
    )
    x = _rand(rng, 3, d)

    def f():
        return _weighted_sum(lora_linear(x, base, adapter), rng)

    return check_function(f, [x, adapter.down, adapter.up], fault=fault)


def _check_info_nce(rng, fault):
    from ..alignment import info_nce_loss

    zs_raw, zm_raw = _rand(rng, 4, 5), _rand(rng, 4, 5)

    def f():
        return info_nce_loss(l2_normalize_rows(zs_raw), l2_normalize_rows(zm_raw), tau=0.3)

    return check_function(f, [zs_raw, zm_raw], fault=fault)


def _check_mse(rng, fault):
    from ..alignment import mse_alignment_loss

    a, b = _rand(rng, 4, 5), _rand(rng, 4, 5)
    return check_function(lambda: mse_alignment_loss(a, b), [a, b], fault=fault)


def _tiny_model(seed: int, mode: str):
    from ..config import RunConfig
    from ..corpus import generate_synthetic_corpus
    from ..model import DualEncoder

    config = RunConfig.defaults().with_overrides(
        {
            "seed": seed,
            "spectral.d_model": 8,
            "spectral.d_embed": 8,
            "spectral.fourier_d": 2,
            "spectral.layers": 1,
            "spectral.heads": 2,
            "spectral.max_peaks": 4,
            "spectral.intensity_hidden": 2,
            "mol.layers": 1,
            "mol.heads": 2,
            "mol.d_model": 8,
            "mol.max_len": 12,
            "mol.mode": mode,
            "mol.lora_rank": 2,
        }
    )
    model = DualEncoder.initialize(config)
    records = generate_synthetic_corpus(4, 2, 8, 0.05, seed=seed)
    batch = [records[0], records[2]]
    return model, batch


def _encoder_loss(model, batch):
    from ..alignment import info_nce_loss

    specs = [model.preprocess_record(r) for r in batch]
    ids = np.stack([model.tokenize(r.smiles) for r in batch])
    zs = model.spectral.encode_batch(specs)
    zm = model.molecular.encode_batch(ids)
    return info_nce_loss(zs, zm, tau=0.07)


def _check_path(rng, fault, prefix, mode):
    seed = int(rng.integers(0, 2**31 - 1))
    model, batch = _tiny_model(seed, mode)
    params = [model.store[p] for p in model.store.trainable_paths(prefix)]
    return check_function(lambda: _encoder_loss(model, batch), params, fault=fault, max_coords=10, rng=rng)


def _check_spectral_path(rng, fault):
    return _check_path(rng, fault, "spectral.", "full")


def _check_molecular_path(rng, fault):
    return _check_path(rng, fault, "mol.", "full")


def _check_lora_path(rng, fault):
    return _check_path(rng, fault, "mol.", "lora")


CHECKS: dict[str, Callable[[np.random.Generator, bool], float]] = {
    "matmul": _check_matmul,
    "batched_matmul": _check_batched_matmul,
    "add_mul_broadcast": _check_add_mul_broadcast,
    "gelu": _check_gelu,
    "relu": _check_relu,
    "softmax_rows": _check_softmax_rows,
    "masked_softmax": _check_masked_softmax,
    "layer_norm": _check_layer_norm,
    "l2_normalize": _check_l2_normalize,
    "logsumexp_rows": _check_logsumexp,
    "structural_ops": _check_structural,
    "multi_head_attention": _check_attention,
    "encoder_block": _check_encoder_block,
    "lora_linear": _check_lora_linear,
    "info_nce_loss": _check_info_nce,
    "mse_alignment_loss": _check_mse,
    "spectral_encoder_path": _check_spectral_path,
    "molecular_encoder_path": _check_molecular_path,
    "molecular_lora_path": _check_lora_path,
}


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    max_error: float

    @property
    def passed(self) -> bool:
        return self.max_error <= TOLERANCE


def run_all_checks(seed: int = 2024, trials: int = 10, inject_fault: str | None = None) -> list[GradCheckResult]:
    """Run every registered check for ``trials`` random draws each and
    report the worst relative error per check."""
    if inject_fault is not None and inject_fault not in CHECKS:
        raise KeyError(f"unknown check {inject_fault!r}")
    results = []
    for name, fn in CHECKS.items():
        worst = 0.0
        for trial in range(trials):
            rng = substream(seed, f"gradcheck.{name}.{trial}")
            worst = max(worst, fn(rng, name == inject_fault))
        results.append(GradCheckResult(name=name, max_error=worst))
    return results
