"""Contrast features, the deconvolution chain, local/global fusion and scoring."""

from __future__ import annotations

from typing import Optional

from . import ops
from .config import NetworkConfig
from .ops import ConvSpec
from .params import ParamStore
from .tensor import ShapeError, Tensor

# exact x2 upsampling: (H - 1) * 2 - 4 + 5 + 1 = 2H
DECONV_SPEC = ConvSpec(kernel=5, stride=2, padding=2, output_padding=1)
POINTWISE = ConvSpec(1, 1, "valid")
FOREGROUND = 0


def build_decoder(config: NetworkConfig, store: ParamStore) -> None:
    side, fuse = config.side_channels, config.fuse_channels
    for level in (5, 4, 3, 2):
        cin = 2 * side + (fuse if level < 5 else 0)
        store.deconv(f"deconv{level}", cin, fuse, 5)
    store.conv("local", fuse, 2 * side + fuse, 1)
    store.conv("score_local", 2, fuse, 1)
    store.conv("score_global", 2, side, 1)


def contrast_feature(xf: Tensor) -> Tensor:
    """Feature minus its 3x3 local mean."""
    return ops.sub(xf, ops.avg_pool2d_same(xf, 3))


def _fuse_inputs(xf: Tensor, xc: Tensor, d: Optional[Tensor], what: str) -> Tensor:
    parts = [xf, xc] if d is None else [xf, xc, d]
    ref = xf.shape[2:]
    for name, t in zip(("X^F", "X^C", "D"), parts):
        if t.shape[2:] != ref:
            raise ShapeError(f"{what}: {name} has spatial size {t.shape[2:]}, expected {ref}")
    return ops.concat_channels(parts)


def deconv_fuse(store: ParamStore, level: int, xf: Tensor, xc: Tensor, d_next: Optional[Tensor] = None) -> Tensor:
    x = _fuse_inputs(xf, xc, d_next, f"deconv level {level}")
    w, b = store[f"deconv{level}.weight"], store[f"deconv{level}.bias"]
    return ops.relu(ops.conv2d_transpose(x, w, b, DECONV_SPEC))


def local_feature(store: ParamStore, xf1: Tensor, xc1: Tensor, d2: Tensor) -> Tensor:
    x = _fuse_inputs(xf1, xc1, d2, "local feature")
    return ops.relu(ops.conv2d(x, store["local.weight"], store["local.bias"], POINTWISE))


def score_fusion(store: ParamStore, xl: Tensor, xg: Tensor) -> tuple:
    """Per-pixel two-class logits from the local map plus the broadcast global term.

    Returns ``(saliency, probs, logits)`` where ``saliency`` is the
    foreground probability channel.
    """
    if xg.shape[2:] != (1, 1):
        raise ShapeError(f"global feature must be 1x1, got {xg.shape[2:]}")
    local = ops.conv2d(xl, store["score_local.weight"], store["score_local.bias"], POINTWISE)
    glob = ops.conv2d(xg, store["score_global.weight"], store["score_global.bias"], POINTWISE)
    logits = ops.add(local, ops.broadcast_spatial(glob, *xl.shape[2:]))
    probs = ops.pixel_softmax2(logits)
    return ops.slice_channels(probs, FOREGROUND, FOREGROUND + 1), probs, logits


def predict_fullres(saliency: Tensor) -> Tensor:
    return ops.bilinear_upsample(saliency, 2)
