"""Bias-corrected adaptive-moment (Adam-style) optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParameterStore


class MissingGradError(RuntimeError):
    """A trainable parameter reached the optimizer without a gradient."""


@dataclass
class OptimizerState:
    """Per-parameter first/second moment accumulators plus step count."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_store(
        cls,
        store: ParameterStore,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> "OptimizerState":
        state = cls(learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon)
        for path in store.trainable_paths():
            t = store[path]
            state.first_moment[path] = np.zeros_like(t.data)
            state.second_moment[path] = np.zeros_like(t.data)
        return state


def optimizer_step(store: ParameterStore, state: OptimizerState) -> tuple[ParameterStore, OptimizerState]:
    """Apply one bias-corrected moment update to the trainable parameters.

    Parameters outside the trainable mask are never touched. Gradients of
    the updated parameters are reset to zero afterwards. The store and
    state are updated in place and returned.
    """
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - state.beta1**t
    bias2 = 1.0 - state.beta2**t
    for path in store.trainable_paths():
        param = store[path]
        grad = param.grad
        if grad is None:
            raise MissingGradError(f"trainable parameter {path!r} has no gradient")
        m = state.first_moment[path]
        v = state.second_moment[path]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad**2
        param.data -= state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
        param.grad = np.zeros_like(param.data)
    return store, state
