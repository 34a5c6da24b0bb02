"""Central-difference gradient oracle."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .ops import switch_pattern
from .tensor import GraphTape, Tensor, reverse_accumulate


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8, scale: float = 0.0) -> float:
    """max |a - n| / max(|a|, |n|, scale, floor) with magnitudes taken tensor-wide.

    ``scale`` lets a caller that probed only some coordinates supply the
    magnitude of the full analytic gradient.
    """
    if analytic.size == 0:
        return 0.0
    diff = np.max(np.abs(analytic - numeric))
    denom = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), scale, floor)
    return float(diff / denom)


def finite_diff_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-5,
    wrt: Optional[Sequence[int]] = None,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Compare tape gradients of the scalar ``fn(*inputs)`` against central differences.

    ``wrt`` selects which inputs to check (default: all).  ``max_entries``
    limits the number of randomly chosen coordinates probed per input, which
    keeps checks on full networks affordable.  A probe whose +-eps steps flip
    a piecewise op (a relu crossing zero, a pooling argmax changing) measures
    no derivative and is replaced by another coordinate.  Returns the largest
    relative error over the checked inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    wrt = list(range(len(arrays))) if wrt is None else list(wrt)
    rng = rng or np.random.default_rng(0)

    tensors = [Tensor(a, requires_grad=i in wrt) for i, a in enumerate(arrays)]
    with GraphTape() as tape:
        with switch_pattern() as base:
            out = fn(*tensors)
    grads = reverse_accumulate(tape, out, [tensors[i] for i in wrt])

    def evaluate() -> tuple:
        with switch_pattern() as pattern:
            value = fn(*[Tensor(a) for a in arrays]).item()
        return value, pattern

    worst = 0.0
    for i, analytic in zip(wrt, grads):
        flat = arrays[i].reshape(-1)
        limit = flat.size if max_entries is None else min(max_entries, flat.size)
        candidates = np.arange(flat.size) if limit == flat.size else rng.permutation(flat.size)
        probe, numeric = [], []
        for idx in candidates:
            if len(probe) == limit:
                break
            orig = flat[idx]
            flat[idx] = orig + eps
            up, up_pattern = evaluate()
            flat[idx] = orig - eps
            down, down_pattern = evaluate()
            flat[idx] = orig
            if up_pattern != base or down_pattern != base:
                continue
            probe.append(idx)
            numeric.append((up - down) / (2 * eps))
        worst = max(
            worst,
            relative_error(
                analytic.reshape(-1)[probe], np.asarray(numeric), scale=float(np.max(np.abs(analytic)))
            ),
        )
    return worst
