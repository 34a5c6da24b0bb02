"""Cross-entropy data term and the soft boundary-overlap term."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .config import LossWeights
from .tensor import ShapeError, Tensor

SOBEL_DELTA = 1e-12
OVERLAP_DELTA = 1e-8


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_pair(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: prediction shape {a.shape} != target shape {b.shape}")


def cross_entropy_loss(pred, gt, epsilon: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy of foreground probabilities against a 0/1 mask."""
    pred, gt = _as_tensor(pred), _as_tensor(gt)
    _check_pair(pred, gt, "cross_entropy_loss")
    fg = ops.log(ops.clip(pred, epsilon, 1.0 - epsilon))
    bg = ops.log(ops.clip(ops.add_const(ops.scale(pred, -1.0), 1.0), epsilon, 1.0 - epsilon))
    y = gt.data
    ll = ops.add(ops.mul(fg, Tensor(y)), ops.mul(bg, Tensor(1.0 - y)))
    return ops.scale(ops.sum_all(ll), -1.0 / y.size)


def boundary_map(saliency) -> Tensor:
    """tanh of the Sobel gradient magnitude; values in [0, 1).

    The magnitude is smoothed as sqrt(g^2 + delta) - sqrt(delta), which is
    differentiable at g = 0 and still exactly zero there.
    """
    x = _as_tensor(saliency)
    if x.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"boundary_map expects [N,1,H,W], got {x.shape}")
    g = ops.sobel_xy(ops.pad_replicate(x, 1))
    gx, gy = ops.slice_channels(g, 0, 1), ops.slice_channels(g, 1, 2)
    sq = ops.add(ops.mul(gx, gx), ops.mul(gy, gy))
    return ops.tanh_act(ops.add_const(ops.sqrt(ops.add_const(sq, SOBEL_DELTA)), -np.sqrt(SOBEL_DELTA)))


def iou_boundary_loss(c, c_hat) -> Tensor:
    """1 - 2|C n C'| / (|C| + |C'|) with product intersection and sum cardinality."""
    c, c_hat = _as_tensor(c), _as_tensor(c_hat)
    _check_pair(c, c_hat, "iou_boundary_loss")
    inter = ops.sum_all(ops.mul(c, c_hat))
    denom = ops.add_const(ops.add(ops.sum_all(c), ops.sum_all(c_hat)), OVERLAP_DELTA)
    return ops.add_const(ops.scale(ops.div(inter, denom), -2.0), 1.0)


@dataclass
class LossTerms:
    total: Tensor
    cross_entropy: Tensor
    boundary: Tensor


def total_loss(pred, gt, weights: LossWeights = LossWeights()) -> LossTerms:
    pred, gt = _as_tensor(pred), _as_tensor(gt)
    ce = cross_entropy_loss(pred, gt, weights.epsilon)
    bd = iou_boundary_loss(boundary_map(gt), boundary_map(pred))
    total = ops.add(ops.scale(ce, weights.lam), ops.scale(bd, weights.gamma))
    return LossTerms(total=total, cross_entropy=ce, boundary=bd)
