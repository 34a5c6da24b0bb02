"""Dense float64 tensors and a reverse-mode tape.

Operations in :mod:`enfnet.ops` append a node to the innermost active
:class:`GraphTape` whenever one of their inputs requires a gradient.  Nodes are
appended in execution order, so the tape is topologically sorted by
construction and :func:`reverse_accumulate` only has to walk it backwards.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class Tensor:
    """A float64 array that may take part in gradient computation."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


@dataclass
class Node:
    op: str
    output: Tensor
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


_ACTIVE: list = []


class GraphTape:
    """Append-only record of executed operations.

    Use as a context manager; every differentiable op executed inside the
    ``with`` block is recorded on this tape::

        with GraphTape() as tape:
            loss = ops.sum_all(ops.mul(w, w))
        (gw,) = reverse_accumulate(tape, loss, [w])
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "GraphTape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Node) -> None:
        self.nodes.append(node)


def active_tape() -> Optional[GraphTape]:
    return _ACTIVE[-1] if _ACTIVE else None


def make_output(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    """Wrap ``data`` as the result of ``op`` and record it if gradients flow."""
    tracked = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=tracked)
    tape = active_tape()
    if tracked and tape is not None:
        tape.record(Node(op, out, tuple(inputs), backward))
    return out


def reverse_accumulate(
    tape: GraphTape, terminal: Tensor, wrt: Iterable[Tensor]
) -> list[np.ndarray]:
    """Gradients of the scalar ``terminal`` with respect to each tensor in ``wrt``.

    Tensors that the terminal does not depend on get an all-zero gradient.
    """
    wrt = list(wrt)
    if terminal.data.size != 1:
        raise ShapeError(f"terminal must be a scalar, got shape {terminal.shape}")
    keep = {id(t) for t in wrt}
    grads: dict[int, np.ndarray] = {id(terminal): np.ones_like(terminal.data)}
    for node in reversed(tape.nodes):
        key = id(node.output)
        g = grads.get(key) if key in keep else grads.pop(key, None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            k = id(inp)
            grads[k] = grads[k] + gi if k in grads else gi
    return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]
