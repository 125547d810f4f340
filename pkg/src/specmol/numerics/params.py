"""Named parameter registry with a trainable mask."""

from __future__ import annotations

from typing import Iterator, Mapping

import numpy as np

from .tensor import Tensor


class ParameterStore:
    """Maps parameter paths to Tensors and tracks which paths train.

    Frozen parameters are created with ``requires_grad=False`` so the tape
    never computes gradients for them; the trainable mask is what the
    optimizer iterates over.
    """

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self._trainable: set[str] = set()

    def create(self, path: str, values, trainable: bool = True) -> Tensor:
        if path in self._params:
            raise KeyError(f"parameter path already registered: {path!r}")
        t = Tensor(np.asarray(values, dtype=np.float64), requires_grad=trainable)
        self._params[path] = t
        if trainable:
            self._trainable.add(path)
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __len__(self) -> int:
        return len(self._params)

    def paths(self, prefix: str = "") -> list[str]:
        return [p for p in self._params if p.startswith(prefix)]

    def trainable_paths(self, prefix: str = "") -> list[str]:
        return [p for p in self._params if p in self._trainable and p.startswith(prefix)]

    def is_trainable(self, path: str) -> bool:
        return path in self._trainable

    def items(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for p, t in self._params.items():
            if p.startswith(prefix):
                yield p, t

    def parameter_count(self, prefix: str = "", trainable_only: bool = False) -> int:
        paths = self.trainable_paths(prefix) if trainable_only else self.paths(prefix)
        return sum(self._params[p].size for p in paths)

    def fill_missing_grads(self) -> None:
        """Give every trainable parameter a zero gradient if backward did
        not reach it (unused parameters get exactly zero)."""
        for path in self._trainable:
            t = self._params[path]
            if t.grad is None:
                t.grad = np.zeros_like(t.data)

    def zero_grads(self) -> None:
        for path in self._trainable:
            t = self._params[path]
            t.grad = np.zeros_like(t.data)

    def state_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {p: t.data.copy() for p, t in self.items(prefix)}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Overwrite parameter values in place; shapes must match and the
        path sets must agree exactly."""
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            detail = ", ".join(sorted(missing | extra))
            raise KeyError(f"parameter path mismatch: {detail}")
        for path, values in arrays.items():
            t = self._params[path]
            values = np.asarray(values, dtype=np.float64)
            if values.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {path!r}: stored {values.shape}, expected {t.data.shape}"
                )
            t.data = values.copy()
