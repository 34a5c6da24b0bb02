"""Edge maps, the shared condition network and the edge guidance blocks.

Each guidance block turns the condition features into a per-position scale
(gamma) and shift (beta) at the resolution of its side feature and applies
``X * gamma + beta``.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .config import EGB_GEOMETRY, NetworkConfig
from .ops import ConvSpec
from .params import ParamStore
from .tensor import ShapeError, Tensor

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()
CN_DEPTH = 4


def sobel_magnitude(gray: np.ndarray) -> np.ndarray:
    """Gradient magnitude of [..., H, W] arrays with replicate borders."""
    pad = [(0, 0)] * (gray.ndim - 2) + [(1, 1), (1, 1)]
    p = np.pad(gray, pad, mode="edge")
    # separable form: central difference then [1, 2, 1] smoothing, so flat
    # regions give exactly zero
    dx = p[..., :, 2:] - p[..., :, :-2]
    dy = p[..., 2:, :] - p[..., :-2, :]
    gx = dx[..., :-2, :] + 2.0 * dx[..., 1:-1, :] + dx[..., 2:, :]
    gy = dy[..., :, :-2] + 2.0 * dy[..., :, 1:-1] + dy[..., :, 2:]
    return np.sqrt(gx * gx + gy * gy)


def area_downsample(x: np.ndarray, factor: int = 2) -> np.ndarray:
    *lead, h, w = x.shape
    if h % factor or w % factor:
        raise ShapeError(f"cannot area-downsample {h}x{w} by {factor}")
    return x.reshape(*lead, h // factor, factor, w // factor, factor).mean(axis=(-3, -1))


def extract_edge_map(image) -> Tensor:
    """Normalized Sobel edge strength of an RGB batch, at half resolution.

    Stands in for an external structured-edge detector: any map in [0, 1]
    at level-1 resolution satisfies the guidance blocks.
    """
    data = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if data.ndim != 4 or data.shape[1] != 3:
        raise ShapeError(f"extract_edge_map expects [N,3,S,S], got {data.shape}")
    mag = sobel_magnitude(data.mean(axis=1, keepdims=True))
    peak = mag.max(axis=(1, 2, 3), keepdims=True)
    norm = np.divide(mag, peak, out=np.zeros_like(mag), where=peak > 0)
    return Tensor(np.clip(area_downsample(norm, 2), 0.0, 1.0))


def build_condition_network(config: NetworkConfig, store: ParamStore) -> None:
    cin = 1
    for j in range(1, CN_DEPTH + 1):
        store.conv(f"cond.conv{j}", config.side_channels, cin, 3)
        cin = config.side_channels


def condition_network(store: ParamStore, config: NetworkConfig, edge: Tensor) -> Tensor:
    s = config.level_size(1)
    if edge.ndim != 4 or edge.shape[1:] != (1, s, s):
        raise ShapeError(f"condition network expects edge maps [N,1,{s},{s}], got {edge.shape}")
    x = edge
    spec = ConvSpec(3, 1, "same")
    for j in range(1, CN_DEPTH + 1):
        x = ops.relu(ops.conv2d(x, store[f"cond.conv{j}.weight"], store[f"cond.conv{j}.bias"], spec))
    return x


def build_egb(config: NetworkConfig, store: ParamStore, level: int) -> None:
    c = config.side_channels
    (k1, _), (k2, _) = EGB_GEOMETRY[level]
    for branch in ("gamma", "beta"):
        store.conv(f"egb{level}.{branch}.conv1", c, c, k1)
        # gamma starts at 1 so every block begins as the identity modulation
        store.conv(f"egb{level}.{branch}.conv2", c, c, k2, bias_value=1.0 if branch == "gamma" else 0.0)


def _branch(store: ParamStore, level: int, branch: str, cond: Tensor) -> Tensor:
    (k1, s1), (k2, s2) = EGB_GEOMETRY[level]
    p = f"egb{level}.{branch}"
    h = ops.relu(ops.conv2d(cond, store[f"{p}.conv1.weight"], store[f"{p}.conv1.bias"], ConvSpec(k1, s1, "same")))
    return ops.conv2d(h, store[f"{p}.conv2.weight"], store[f"{p}.conv2.bias"], ConvSpec(k2, s2, "same"))


def egb_forward(store: ParamStore, level: int, cond: Tensor, x: Tensor) -> Tensor:
    gamma = _branch(store, level, "gamma", cond)
    beta = _branch(store, level, "beta", cond)
    if gamma.shape != x.shape:
        raise ShapeError(f"guidance block {level}: branch output {gamma.shape} != side feature {x.shape}")
    return ops.add(ops.mul(x, gamma), beta)
