"""Named learnable tensors."""

from __future__ import annotations

import zlib
from typing import Iterator, Mapping

import numpy as np

from .tensor import ShapeError, Tensor

INIT_STD = 0.01


def param_rng(seed: int, name: str) -> np.random.Generator:
    # keyed by name so that adding or removing a branch leaves every other
    # parameter's initial value unchanged
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


class ParamStore:
    """Ordered mapping of parameter name to a gradient-tracking :class:`Tensor`."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def gaussian(self, name: str, shape: tuple, std: float = INIT_STD) -> Tensor:
        return self.add(name, param_rng(self.seed, name).normal(0.0, std, size=shape))

    def constant(self, name: str, shape: tuple, value: float = 0.0) -> Tensor:
        return self.add(name, np.full(shape, float(value)))

    def conv(self, prefix: str, cout: int, cin: int, k: int, bias_value: float = 0.0) -> None:
        self.gaussian(f"{prefix}.weight", (cout, cin, k, k))
        self.constant(f"{prefix}.bias", (cout,), bias_value)

    def deconv(self, prefix: str, cin: int, cout: int, k: int) -> None:
        self.gaussian(f"{prefix}.weight", (cin, cout, k, k))
        self.constant(f"{prefix}.bias", (cout,))

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

    def tensors(self) -> list:
        return list(self._params.values())

    def num_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def rebound(self, tensors) -> "ParamStore":
        """A store with the same names bound to different tensors."""
        tensors = list(tensors)
        if len(tensors) != len(self._params):
            raise ValueError(f"expected {len(self._params)} tensors, got {len(tensors)}")
        out = ParamStore(self.seed)
        out._params = dict(zip(self._params, tensors))
        return out

    def state(self) -> dict:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        """Overwrite values from ``state``; names and shapes must match exactly."""
        missing = [k for k in self._params if k not in state]
        extra = [k for k in state if k not in self._params]
        if missing or extra:
            raise ShapeError(
                f"parameter names differ: missing {missing[:5]}{'...' if len(missing) > 5 else ''}, "
                f"unexpected {extra[:5]}{'...' if len(extra) > 5 else ''}"
            )
        for k, t in self._params.items():
            value = np.asarray(state[k], dtype=np.float64)
            if value.shape != t.shape:
                raise ShapeError(f"parameter {k!r}: expected shape {t.shape}, got {value.shape}")
        for k, t in self._params.items():
            t.data = np.array(state[k], dtype=np.float64)
