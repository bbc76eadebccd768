"""Named parameter container with deterministic, name-keyed initialisation."""
from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

from . import tensor as T


def _rng_for(seed: int, name: str) -> np.random.Generator:
    # keyed by name so adding/removing blocks never shifts another block's init
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


class ParamStore:
    """Ordered mapping of hierarchical names (``micro_msin.ta.layer0.x.attn.w_q``) to tensors."""

    def __init__(self, seed: int = 0, dtype=np.float64):
        self.seed = seed
        self.dtype = dtype
        self._tensors: dict[str, T.Tensor] = {}

    def add(self, name: str, shape: tuple[int, ...], init: str = "xavier") -> T.Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        rng = _rng_for(self.seed, name)
        if init == "xavier":
            fan_in, fan_out = shape[0], shape[-1]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-bound, bound, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "normal":
            data = rng.normal(0.0, 0.02, size=shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = T.Tensor(data.astype(self.dtype), requires_grad=True)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> T.Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._tensors if n.startswith(prefix)]

    def count(self, prefix: str = "") -> int:
        return sum(self._tensors[n].data.size for n in self.names(prefix))

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._tensors.items()}

    def load_state(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        missing = set(self._tensors) - set(state)
        extra = set(state) - set(self._tensors)
        if strict and (missing or extra):
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, arr in state.items():
            if name not in self._tensors:
                continue
            t = self._tensors[name]
            if arr.shape != t.shape:
                raise T.ShapeError(f"{name}: checkpoint shape {arr.shape} vs model {t.shape}")
            t.data = np.asarray(arr, dtype=self.dtype).copy()

    def copy(self) -> "ParamStore":
        other = ParamStore(self.seed, self.dtype)
        for n, t in self._tensors.items():
            other._tensors[n] = T.Tensor(t.data.copy(), requires_grad=True)
        return other
