"""VGG-style encoder with five side outputs and the global context block."""

from __future__ import annotations

from dataclasses import dataclass

from . import ops
from .config import VGG_DEPTHS, NetworkConfig
from .ops import ConvSpec
from .params import ParamStore
from .tensor import ShapeError, Tensor

SAME3 = ConvSpec(3, 1, "same")


@dataclass
class SideFeatures:
    sides: list  # X_1..X_5, level i at input_size / 2**i
    level5: Tensor  # pooled output of the last VGG block, feeds the global block


def build_backbone(config: NetworkConfig, store: ParamStore) -> None:
    cin = 3
    for b, (depth, width) in enumerate(zip(VGG_DEPTHS, config.block_channels), start=1):
        for layer in range(1, depth + 1):
            store.conv(f"backbone.block{b}.conv{layer}", width, cin, 3)
            cin = width
        store.conv(f"backbone.side{b}", config.side_channels, width, 3)
    cin = config.block_channels[-1]
    for j, k in enumerate(config.global_kernels, start=1):
        store.conv(f"global.conv{j}", config.side_channels, cin, k)
        cin = config.side_channels


def _conv_relu(x: Tensor, store: ParamStore, prefix: str, spec: ConvSpec = SAME3) -> Tensor:
    return ops.relu(ops.conv2d(x, store[f"{prefix}.weight"], store[f"{prefix}.bias"], spec))


def backbone_forward(store: ParamStore, config: NetworkConfig, image: Tensor) -> SideFeatures:
    s = config.input_size
    if image.ndim != 4 or image.shape[1:] != (3, s, s):
        raise ShapeError(f"backbone expects images of shape [N,3,{s},{s}], got {image.shape}")
    x = image
    sides = []
    for b, depth in enumerate(VGG_DEPTHS, start=1):
        for layer in range(1, depth + 1):
            x = _conv_relu(x, store, f"backbone.block{b}.conv{layer}")
        x = ops.max_pool2d(x, 2, 2)
        sides.append(_conv_relu(x, store, f"backbone.side{b}"))
    return SideFeatures(sides=sides, level5=x)


def global_block(store: ParamStore, config: NetworkConfig, level5: Tensor) -> Tensor:
    """Valid convolutions that shrink the deepest map to a 1x1 descriptor."""
    x = level5
    for j, k in enumerate(config.global_kernels, start=1):
        x = _conv_relu(x, store, f"global.conv{j}", ConvSpec(k, 1, "valid"))
    if x.shape[2:] != (1, 1):
        raise ShapeError(f"global feature must be 1x1, got {x.shape[2:]}")
    return x
