from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .tensor import DimensionError, StateError, Tensor


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; identical seeds give identical draws on every platform."""
    return np.random.Generator(np.random.PCG64(int(seed)))


RNG_ALGORITHM = "numpy.PCG64"


class ParamStore:
    """Named 2-d parameters with gradient and Adam moment buffers.

    Iteration order is insertion order, which keeps checkpoints and optimizer
    updates deterministic.
    """

    def __init__(self) -> None:
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.moment1: dict[str, np.ndarray] = {}
        self.moment2: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        if value.ndim != 2:
            raise DimensionError(f"parameter {name!r} must be 2-d, got shape {value.shape}")
        p = Tensor(value, requires_grad=True, name=name)
        self._params[name] = p
        self.moment1[name] = np.zeros_like(value)
        self.moment2[name] = np.zeros_like(value)
        return p

    def uniform(self, name: str, rows: int, cols: int, rng: np.random.Generator,
                fan_in: int | None = None) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in if fan_in is not None else rows)
        return self.add(name, rng.uniform(-bound, bound, size=(rows, cols)))

    def zeros(self, name: str, rows: int, cols: int) -> Tensor:
        return self.add(name, np.zeros((rows, cols)))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def prepare_grads(self) -> None:
        """Give every parameter a zeroed buffer so unreachable ones read as 0."""
        for p in self._params.values():
            p.grad = np.zeros_like(p.data)

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for name, p in self._params.items():
            if p.grad is None:
                raise StateError(f"parameter {name!r} has no gradient; run backward first")
            out[name] = p.grad
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state(self, values: dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            if name not in values:
                raise KeyError(f"missing parameter {name!r}")
            v = np.asarray(values[name], dtype=np.float64)
            if v.shape != p.data.shape:
                raise DimensionError(
                    f"parameter {name!r} has shape {v.shape}, expected {p.data.shape}")
            p.data = v.copy()


def backward(loss: Tensor | None, params: ParamStore) -> dict[str, np.ndarray]:
    """Fill ``params`` gradient buffers from a scalar loss node."""
    if loss is None or not isinstance(loss, Tensor):
        raise StateError("no completed forward pass to differentiate")
    params.prepare_grads()
    loss.backward()
    return params.grads()
