from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import ArgumentError
from .prng import SplitMix
from .tensor import Tensor

INIT_STD = 0.02


class ParamStore:
    """Named trainable tensors, iterated in lexicographic name order."""

    def __init__(self, tensors: dict[str, Tensor] | None = None):
        self._tensors: dict[str, Tensor] = {}
        for name, t in (tensors or {}).items():
            self[name] = t

    def __setitem__(self, name: str, value) -> None:
        if not isinstance(value, Tensor):
            value = Tensor(np.asarray(value))
        value.requires_grad = True
        self._tensors[name] = value

    def add(self, name: str, value) -> Tensor:
        if name in self._tensors:
            raise ArgumentError(f"duplicate parameter name {name!r}")
        self[name] = value
        return self._tensors[name]

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def items(self):
        return [(n, self._tensors[n]) for n in self.names()]

    def update(self, other: "ParamStore", prefix: str = "") -> None:
        for name, t in other.items():
            self._tensors[prefix + name] = t

    def subset(self, prefix: str) -> "ParamStore":
        sub = ParamStore()
        for name, t in self.items():
            if name.startswith(prefix):
                sub._tensors[name[len(prefix):]] = t
        return sub

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {n: (t.grad if t.grad is not None else np.zeros_like(t.data)) for n, t in self.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._tensors) - set(state)
        if missing:
            raise ArgumentError(f"missing parameters: {sorted(missing)}")
        for name, arr in state.items():
            if name not in self._tensors:
                raise ArgumentError(f"unexpected parameter {name!r}")
            cur = self._tensors[name]
            if cur.shape != arr.shape:
                raise ArgumentError(f"{name}: shape {arr.shape} != {cur.shape}")
            cur.data = np.array(arr, dtype=cur.dtype)

    def astype(self, dtype) -> None:
        for t in self._tensors.values():
            t.data = t.data.astype(dtype)
            t.grad = None

    def count(self) -> int:
        return sum(t.size for t in self._tensors.values())


def init_weight(seed: int, name: str, shape, dtype=np.float32, std: float = INIT_STD) -> np.ndarray:
    """normal(0, std) keyed by (seed, name) so insertion order never matters."""
    return SplitMix(seed, "param", name).normal(shape, std=std).astype(dtype)
