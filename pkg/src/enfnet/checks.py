"""Finite-difference checks for every differentiable operation.

Each check draws random instances, builds a scalar objective (a fixed random
projection for non-scalar ops) and returns the worst relative error reported
by :func:`~enfnet.gradcheck.finite_diff_check`.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Callable

import numpy as np

from . import ops
from .backbone import backbone_forward, build_backbone
from .config import NetworkConfig
from .decoder import build_decoder, contrast_feature, deconv_fuse, local_feature, score_fusion
from .edge import build_condition_network, build_egb, condition_network, egb_forward, extract_edge_map
from .gradcheck import finite_diff_check
from .losses import boundary_map, cross_entropy_loss, iou_boundary_loss, total_loss
from .model import ENFNet
from .ops import ConvSpec
from .params import ParamStore
from .tensor import Tensor

DEFAULT_TOL = 1e-4
GRADCHECK_SIZE = 32


def _projected(op: Callable, out_shape: tuple, rng) -> Callable:
    r = Tensor(rng.standard_normal(out_shape))

    def fn(*ts):
        return ops.sum_all(ops.mul(op(*ts), r))

    return fn


def _check_op(op, inputs, rng, **kw) -> float:
    out = op(*[Tensor(a) for a in inputs])
    return finite_diff_check(_projected(op, out.shape, rng), inputs, rng=rng, **kw)


def _repeat(instances: int):
    def deco(f):
        def run(rng, instances=instances):
            return max(f(rng) for _ in range(instances))

        run.__name__ = f.__name__
        run.__doc__ = f.__doc__
        return run

    return deco


@_repeat(10)
def check_conv2d(rng):
    stride = int(rng.integers(1, 3))
    padding = ["same", "valid", 1][int(rng.integers(0, 3))]
    spec = ConvSpec(3, stride, padding)
    x, w, b = rng.standard_normal((2, 3, 5, 5)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
    return _check_op(lambda x, w, b: ops.conv2d(x, w, b, spec), [x, w, b], rng)


@_repeat(10)
def check_conv2d_transpose(rng):
    spec = [ConvSpec(5, 2, 2, output_padding=1), ConvSpec(3, 1, 1), ConvSpec(3, 2, 0, output_padding=1)][
        int(rng.integers(0, 3))
    ]
    x, w, b = rng.standard_normal((1, 3, 4, 4)), rng.standard_normal((3, 2) + spec.kernel), rng.standard_normal(2)
    return _check_op(lambda x, w, b: ops.conv2d_transpose(x, w, b, spec), [x, w, b], rng)


@_repeat(10)
def check_max_pool2d(rng):
    # well-separated values so no window's argmax flips under the probe step
    x = rng.permutation(32).reshape(1, 2, 4, 4) * 0.1 + rng.uniform(-0.01, 0.01, (1, 2, 4, 4))
    return _check_op(lambda x: ops.max_pool2d(x, 2, 2), [x], rng)


@_repeat(10)
def check_avg_pool2d_same(rng):
    return _check_op(lambda x: ops.avg_pool2d_same(x, 3), [rng.standard_normal((1, 2, 5, 4))], rng)


@_repeat(10)
def check_bilinear_upsample(rng):
    factor = int(rng.integers(1, 4))
    return _check_op(lambda x: ops.bilinear_upsample(x, factor), [rng.standard_normal((1, 2, 3, 4))], rng)


@_repeat(10)
def check_concat_channels(rng):
    parts = [rng.standard_normal((1, c, 3, 3)) for c in (1, 2, 3)]
    return _check_op(lambda *ps: ops.concat_channels(ps), parts, rng)


@_repeat(10)
def check_mul(rng):
    return _check_op(ops.mul, [rng.standard_normal((1, 2, 3, 3)), rng.standard_normal((1, 2, 3, 3))], rng)


@_repeat(10)
def check_add(rng):
    return _check_op(ops.add, [rng.standard_normal((1, 2, 3, 3)), rng.standard_normal((1, 2, 3, 3))], rng)


@_repeat(10)
def check_relu(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    x = np.where(np.abs(x) < 1e-3, 0.5, x)  # stay off the kink
    return _check_op(ops.relu, [x], rng)


@_repeat(10)
def check_tanh(rng):
    return _check_op(ops.tanh_act, [rng.standard_normal((1, 2, 3, 3))], rng)


@_repeat(10)
def check_pixel_softmax2(rng):
    return _check_op(ops.pixel_softmax2, [3 * rng.standard_normal((2, 2, 3, 3))], rng)


@_repeat(10)
def check_sub_div(rng):
    a, b = rng.standard_normal((1, 2, 3, 3)), rng.uniform(0.5, 2.0, (1, 2, 3, 3))
    return max(_check_op(ops.sub, [a, b], rng), _check_op(ops.div, [a, b], rng))


@_repeat(10)
def check_scalar_ops(rng):
    """scale, add_const, sqrt, log, clip, sum_all and mean_all on their smooth domains."""
    x = rng.uniform(0.2, 2.0, (1, 2, 3, 3))
    x = np.where(np.abs(x - 1.0) < 1e-3, 1.1, x)  # keep clip away from its corner at 1

    def chain(t):
        y = ops.add_const(ops.scale(ops.log(ops.sqrt(t)), 1.5), 0.25)
        return ops.add(ops.clip(t, 0.0, 1.0), ops.mul(y, y))

    r = Tensor(rng.standard_normal(x.shape))

    def fn(t):
        return ops.add(ops.sum_all(ops.mul(chain(t), r)), ops.mean_all(ops.tanh_act(t)))

    return finite_diff_check(fn, [x], rng=rng)


@_repeat(10)
def check_channel_ops(rng):
    """slice_channels, broadcast_spatial and hflip."""
    x, g = rng.standard_normal((1, 4, 3, 5)), rng.standard_normal((1, 2, 1, 1))
    return max(
        _check_op(lambda t: ops.slice_channels(t, 1, 3), [x], rng),
        _check_op(lambda t: ops.broadcast_spatial(t, 3, 4), [g], rng),
        _check_op(ops.hflip, [x], rng),
    )


@_repeat(10)
def check_pad_replicate(rng):
    return _check_op(lambda t: ops.pad_replicate(t, 1), [rng.standard_normal((1, 2, 4, 3))], rng)


@_repeat(10)
def check_sobel_xy(rng):
    return _check_op(ops.sobel_xy, [rng.standard_normal((2, 1, 6, 5))], rng)


@_repeat(10)
def check_boundary_map(rng):
    return _check_op(boundary_map, [rng.uniform(0, 1, (1, 1, 6, 6))], rng)


@_repeat(10)
def check_cross_entropy(rng):
    gt = (rng.uniform(size=(1, 1, 5, 5)) > 0.5).astype(float)
    pred = rng.uniform(0.05, 0.95, (1, 1, 5, 5))
    return finite_diff_check(lambda p: cross_entropy_loss(p, gt), [pred], rng=rng)


@_repeat(10)
def check_iou_boundary_loss(rng):
    a, b = rng.uniform(0, 1, (1, 1, 5, 5)), rng.uniform(0, 1, (1, 1, 5, 5))
    return finite_diff_check(iou_boundary_loss, [a, b], rng=rng)


def _scaled_init(store: ParamStore, rng) -> None:
    """Replace the tiny default initialisation by fan-in scaled weights.

    Gradients of a 0.01-std network are too small for a meaningful
    float64 central-difference comparison.
    """
    for name, t in store.items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(t.shape[1:])) if not name.startswith("deconv") else t.shape[0] * 25 // 4
            t.data = rng.standard_normal(t.shape) * np.sqrt(2.0 / fan_in)
        else:
            t.data = rng.uniform(-0.1, 0.1, t.shape)


def _store_fn(store: ParamStore, forward: Callable, n_extra: int) -> Callable:
    def fn(*ts):
        return forward(store.rebound(ts[n_extra:]), *ts[:n_extra])

    return fn


SMALL = NetworkConfig(input_size=32, block_channels=(4, 4, 6, 6, 8), side_channels=4, global_kernels=(1, 1, 1))


@_repeat(5)
def check_egb(rng):
    level = int(rng.integers(1, 6))
    cfg = SMALL
    store = ParamStore()
    build_egb(cfg, store, level)
    _scaled_init(store, rng)
    c = cfg.side_channels
    cond = rng.standard_normal((1, c, cfg.level_size(1), cfg.level_size(1)))
    x = rng.standard_normal((1, c, cfg.level_size(level), cfg.level_size(level)))
    fn = _store_fn(store, lambda s, cond, x: egb_forward(s, level, cond, x), 2)
    inputs = [cond, x] + [t.data for t in store.tensors()]
    out = fn(*[Tensor(a) for a in inputs])
    return finite_diff_check(_projected(fn, out.shape, rng), inputs, rng=rng, max_entries=8)


@_repeat(2)
def check_backbone(rng):
    cfg = SMALL
    store = ParamStore()
    build_backbone(cfg, store)
    build_condition_network(cfg, store)
    _scaled_init(store, rng)
    proj = [rng.standard_normal((1, cfg.side_channels, cfg.level_size(i), cfg.level_size(i))) for i in range(1, 6)]
    edge = rng.uniform(0, 1, (1, 1, cfg.level_size(1), cfg.level_size(1)))
    rc = rng.standard_normal((1, cfg.side_channels, cfg.level_size(1), cfg.level_size(1)))

    def forward(s, image):
        feats = backbone_forward(s, cfg, image)
        total = ops.sum_all(ops.mul(condition_network(s, cfg, Tensor(edge)), Tensor(rc)))
        for x, r in zip(feats.sides, proj):
            total = ops.add(total, ops.sum_all(ops.mul(x, Tensor(r))))
        return total

    image = rng.uniform(0, 1, (1, 3, 32, 32))
    inputs = [image] + [t.data for t in store.tensors()]
    return finite_diff_check(_store_fn(store, forward, 1), inputs, rng=rng, max_entries=4)


@_repeat(2)
def check_decoder(rng):
    cfg = SMALL
    store = ParamStore()
    build_decoder(cfg, store)
    _scaled_init(store, rng)
    c = cfg.side_channels
    fused = [rng.standard_normal((1, c, cfg.level_size(i), cfg.level_size(i))) for i in range(1, 6)]
    xg = rng.standard_normal((1, c, 1, 1))
    r = rng.standard_normal((1, 1, cfg.level_size(1), cfg.level_size(1)))

    def forward(s, xg, *xf):
        xc = [contrast_feature(f) for f in xf]
        d = None
        for level in (5, 4, 3, 2):
            d = deconv_fuse(s, level, xf[level - 1], xc[level - 1], d)
        sal, _, _ = score_fusion(s, local_feature(s, xf[0], xc[0], d), xg)
        return ops.sum_all(ops.mul(sal, Tensor(r)))

    inputs = [xg] + fused + [t.data for t in store.tensors()]
    return finite_diff_check(_store_fn(store, forward, 6), inputs, rng=rng, max_entries=6)


def gradcheck_network(base: NetworkConfig) -> NetworkConfig:
    """``base`` widths at a 32x32 input (level-5 map 1x1, so global kernels 1,1,1)."""
    return replace(base, input_size=GRADCHECK_SIZE, global_kernels=(1, 1, 1), supervise_fullres=False)


def check_total_loss(rng, instances: int = 1, config: NetworkConfig = None, max_entries: int = 3):
    """End-to-end: image -> network -> combined loss, every parameter tensor probed."""
    cfg = gradcheck_network(config or NetworkConfig())
    worst = 0.0
    for _ in range(instances):
        model = ENFNet(cfg, seed=int(rng.integers(1 << 31)))
        _scaled_init(model.params, rng)
        image = rng.uniform(0, 1, (1, 3, cfg.input_size, cfg.input_size))
        edge = extract_edge_map(image)
        s = cfg.level_size(1)
        gt = np.zeros((1, 1, s, s))
        a, b = sorted(rng.integers(2, s - 2, size=2))
        gt[..., a : b + 1, a : b + 1] = 1.0

        def fn(image, *ts):
            out = model.bound(ts).forward(image, edge)
            return total_loss(out.saliency, gt).total

        inputs = [image] + [t.data for t in model.params.tensors()]
        worst = max(worst, finite_diff_check(fn, inputs, rng=rng, max_entries=max_entries))
    return worst


CHECKS = {
    "conv2d": check_conv2d,
    "conv2d_transpose": check_conv2d_transpose,
    "max_pool2d": check_max_pool2d,
    "avg_pool2d_same": check_avg_pool2d_same,
    "bilinear_upsample": check_bilinear_upsample,
    "concat_channels": check_concat_channels,
    "mul": check_mul,
    "add": check_add,
    "relu": check_relu,
    "tanh": check_tanh,
    "pixel_softmax2": check_pixel_softmax2,
    "sub_div": check_sub_div,
    "scalar_ops": check_scalar_ops,
    "channel_ops": check_channel_ops,
    "pad_replicate": check_pad_replicate,
    "sobel_xy": check_sobel_xy,
    "boundary_map": check_boundary_map,
    "cross_entropy": check_cross_entropy,
    "iou_boundary_loss": check_iou_boundary_loss,
    "egb": check_egb,
    "backbone": check_backbone,
    "decoder": check_decoder,
    "total_loss": check_total_loss,
}


def run_checks(names=None, seed: int = 0) -> dict:
    names = list(CHECKS) if not names else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown check(s): {', '.join(unknown)}; available: {', '.join(CHECKS)}")
    return {n: CHECKS[n](np.random.default_rng([seed, i])) for i, n in enumerate(names)}
