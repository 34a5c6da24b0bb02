"""Differentiable layer kernels on NCHW float64 tensors.

Every function takes and returns :class:`~enfnet.tensor.Tensor` objects and
records its backward rule on the active tape.  Convolutions use an
im2col/GEMM formulation; the transposed convolution is implemented as the
exact adjoint of :func:`conv2d` (it reuses the same window bookkeeping).
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, make_output

_SWITCHES = None


@contextmanager
def switch_pattern():
    """Collect the branch taken by every piecewise op (relu, max pool, clip).

    Two evaluations with equal patterns lie on the same smooth piece, which
    is what a finite-difference probe needs.
    """
    global _SWITCHES
    outer, _SWITCHES = _SWITCHES, []
    try:
        yield _SWITCHES
    finally:
        _SWITCHES = outer


def _note_switches(pattern: np.ndarray) -> None:
    if _SWITCHES is not None:
        _SWITCHES.append(np.packbits(pattern).tobytes() if pattern.dtype == bool else pattern.tobytes())

Padding = Union[str, int, tuple]


def _pair(v) -> tuple:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ValueError(f"expected a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a (transposed) convolution.

    ``padding`` may be an int, an (h, w) pair, ``"same"`` (odd kernels only,
    resolves to ``k // 2``) or ``"valid"``.
    """

    kernel: tuple = (3, 3)
    stride: tuple = (1, 1)
    padding: Padding = "same"
    output_padding: tuple = (0, 0)

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "output_padding", _pair(self.output_padding))
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise ValueError(f"kernel and stride must be positive: {self}")
        if isinstance(self.padding, str):
            mode = self.padding.lower()
            if mode not in ("same", "valid"):
                raise ValueError(f"unknown padding mode {self.padding!r}")
            if mode == "same" and (self.kernel[0] % 2 == 0 or self.kernel[1] % 2 == 0):
                raise ValueError(f"SAME padding needs odd kernels, got {self.kernel}")
            object.__setattr__(self, "padding", mode)
        else:
            object.__setattr__(self, "padding", _pair(self.padding))
            if min(self.padding) < 0:
                raise ValueError(f"negative padding {self.padding}")
        for o, s in zip(self.output_padding, self.stride):
            if not 0 <= o < s:
                raise ValueError(
                    f"output_padding {self.output_padding} must be >= 0 and < stride {self.stride}"
                )

    @property
    def pad(self) -> tuple:
        if self.padding == "same":
            return self.kernel[0] // 2, self.kernel[1] // 2
        if self.padding == "valid":
            return 0, 0
        return self.padding

    def conv_out(self, h: int, w: int) -> tuple:
        (kh, kw), (sh, sw), (ph, pw) = self.kernel, self.stride, self.pad
        return (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1

    def transpose_out(self, h: int, w: int) -> tuple:
        (kh, kw), (sh, sw), (ph, pw) = self.kernel, self.stride, self.pad
        oh, ow = self.output_padding
        return (h - 1) * sh - 2 * ph + kh + oh, (w - 1) * sw - 2 * pw + kw + ow


def _check4(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} must be 4-D [N,C,H,W], got shape {x.shape}")


def _windows(xp: np.ndarray, kh, kw, sh, sw, ho, wo) -> np.ndarray:
    """im2col: rows are output positions (n, i, j), columns are (c, di, dj)."""
    n, c = xp.shape[:2]
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    v = v[:, :, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]
    return v.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def _col2im(cols: np.ndarray, shape: tuple, kh, kw, sh, sw, ho, wo) -> np.ndarray:
    n, c = shape[:2]
    cols = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros(shape)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] += cols[
                :, :, i, j
            ]
    return out


def _nchw(mat: np.ndarray, n, h, w) -> np.ndarray:
    return np.ascontiguousarray(mat.reshape(n, h, w, -1).transpose(0, 3, 1, 2))


def _rows(x: np.ndarray) -> np.ndarray:
    return x.transpose(0, 2, 3, 1).reshape(-1, x.shape[1])


def conv2d(x: Tensor, weight: Tensor, bias: Tensor = None, spec: ConvSpec = None) -> Tensor:
    """Cross-correlation of ``x`` with ``weight`` [Cout, Cin, kH, kW] plus bias."""
    _check4(x, "conv2d input")
    _check4(weight, "conv2d weight")
    cout, cin, kh, kw = weight.shape
    spec = spec or ConvSpec(kernel=(kh, kw), padding="valid")
    if spec.kernel != (kh, kw):
        raise ShapeError(f"conv2d: weight kernel {(kh, kw)} != spec kernel {spec.kernel}")
    n, c, h, w = x.shape
    if c != cin:
        raise ShapeError(f"conv2d: input channels C={c} do not match weight Cin={cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    (sh, sw), (ph, pw) = spec.stride, spec.pad
    if h + 2 * ph < kh:
        raise ShapeError(f"conv2d: kernel height {kh} exceeds padded input height {h + 2 * ph}")
    if w + 2 * pw < kw:
        raise ShapeError(f"conv2d: kernel width {kw} exceeds padded input width {w + 2 * pw}")
    ho, wo = spec.conv_out(h, w)

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    cols = _windows(xp, kh, kw, sh, sw, ho, wo)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = _nchw(out, n, ho, wo)

    def backward(g):
        gm = _rows(g)
        dw = (gm.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        db = gm.sum(axis=0) if bias is not None else None
        dx = None
        if x.requires_grad:
            dxp = _col2im(gm @ wmat, xp.shape, kh, kw, sh, sw, ho, wo)
            dx = dxp[:, :, ph : ph + h, pw : pw + w]
        return (dx, dw, db) if bias is not None else (dx, dw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return make_output("conv2d", out, inputs, backward)


def conv2d_transpose(x: Tensor, weight: Tensor, bias: Tensor = None, spec: ConvSpec = None) -> Tensor:
    """Transposed convolution; ``weight`` is [Cin, Cout, kH, kW].

    With zero bias this is the adjoint of :func:`conv2d` using the same weight
    tensor and spec.
    """
    _check4(x, "conv2d_transpose input")
    _check4(weight, "conv2d_transpose weight")
    cin, cout, kh, kw = weight.shape
    spec = spec or ConvSpec(kernel=(kh, kw), padding="valid")
    if spec.kernel != (kh, kw):
        raise ShapeError(f"conv2d_transpose: weight kernel {(kh, kw)} != spec kernel {spec.kernel}")
    n, c, h, w = x.shape
    if c != cin:
        raise ShapeError(f"conv2d_transpose: input channels C={c} do not match weight Cin={cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d_transpose: bias shape {bias.shape} != ({cout},)")
    (sh, sw), (ph, pw) = spec.stride, spec.pad
    ho, wo = spec.transpose_out(h, w)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d_transpose: computed output size {(ho, wo)} is not positive")

    buf_shape = (n, cout, ho + 2 * ph, wo + 2 * pw)
    xm = _rows(x.data)
    wmat = weight.data.reshape(cin, -1)
    full = _col2im(xm @ wmat, buf_shape, kh, kw, sh, sw, h, w)
    out = full[:, :, ph : ph + ho, pw : pw + wo]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else g
        cols = _windows(gp, kh, kw, sh, sw, h, w)
        dw = (xm.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        dx = _nchw(cols @ wmat.T, n, h, w) if x.requires_grad else None
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return make_output("conv2d_transpose", out, inputs, backward)


def max_pool2d(x: Tensor, k: int = 2, s: int = 2) -> Tensor:
    """Non-overlapping max pooling; ties route the gradient to the first index."""
    _check4(x, "max_pool2d input")
    if k != s:
        raise ValueError("only non-overlapping pooling (k == s) is supported")
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"max_pool2d: spatial size {(h, w)} not divisible by {k}")
    ho, wo = h // k, w // k
    win = x.data.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    idx = win.argmax(axis=-1)[..., None]
    _note_switches(idx.astype(np.uint8))
    out = np.take_along_axis(win, idx, axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros_like(win)
        np.put_along_axis(gw, idx, g[..., None], axis=-1)
        return (gw.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return make_output("max_pool2d", out, (x,), backward)


def _box_sum(a: np.ndarray, k: int) -> np.ndarray:
    r = k // 2
    h, w = a.shape[-2:]
    p = np.pad(a, [(0, 0)] * (a.ndim - 2) + [(r, r), (r, r)])
    out = np.zeros_like(a)
    for i in range(k):
        for j in range(k):
            out += p[..., i : i + h, j : j + w]
    return out


def _box_sum_deviation(a: np.ndarray, k: int) -> np.ndarray:
    """Sum over in-bounds window cells of (cell - centre)."""
    r = k // 2
    h, w = a.shape[-2:]
    out = np.zeros_like(a)
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            if di == dj == 0:
                continue
            rows = slice(max(0, -di), h - max(0, di))
            cols = slice(max(0, -dj), w - max(0, dj))
            src_rows = slice(max(0, di), h - max(0, -di))
            src_cols = slice(max(0, dj), w - max(0, -dj))
            out[..., rows, cols] += a[..., src_rows, src_cols] - a[..., rows, cols]
    return out


def avg_pool2d_same(x: Tensor, k: int = 3) -> Tensor:
    """Stride-1 mean over the in-bounds part of each k x k window."""
    _check4(x, "avg_pool2d_same input")
    if k % 2 == 0:
        raise ValueError("window size must be odd")
    counts = _box_sum(np.ones(x.shape[-2:]), k)
    # x + mean(neighbour - x) rather than sum / count: flat regions then
    # reproduce their value exactly instead of up to rounding
    out = x.data + _box_sum_deviation(x.data, k) / counts

    def backward(g):
        return (_box_sum(g / counts, k),)

    return make_output("avg_pool2d_same", out, (x,), backward)


def _bilinear_taps(n: int, factor: int) -> tuple:
    src = np.clip((np.arange(n * factor) + 0.5) / factor - 0.5, 0.0, n - 1)
    i0 = np.floor(src).astype(int)
    return i0, np.minimum(i0 + 1, n - 1), src - i0


def _lerp(a: np.ndarray, axis: int, n: int, factor: int) -> np.ndarray:
    i0, i1, frac = _bilinear_taps(n, factor)
    lo, hi = np.take(a, i0, axis=axis), np.take(a, i1, axis=axis)
    shape = [1] * a.ndim
    shape[axis] = -1
    return lo + frac.reshape(shape) * (hi - lo)


def _bilinear_matrix(n: int, factor: int) -> np.ndarray:
    m = n * factor
    i0, i1, frac = _bilinear_taps(n, factor)
    mat = np.zeros((m, n))
    rows = np.arange(m)
    np.add.at(mat, (rows, i0), 1.0 - frac)
    np.add.at(mat, (rows, i1), frac)
    return mat


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling by an integer factor (align_corners=False)."""
    _check4(x, "bilinear_upsample input")
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    h, w = x.shape[2:]
    # lerp form keeps constants exact; the backward uses the equivalent matrices
    out = _lerp(_lerp(x.data, 2, h, factor), 3, w, factor)
    mh, mw = _bilinear_matrix(h, factor), _bilinear_matrix(w, factor)

    def backward(g):
        return (mh.T @ g @ mw,)

    return make_output("bilinear_upsample", out, (x,), backward)


_SMOOTH = (1.0, 2.0, 1.0)


def sobel_xy(x: Tensor) -> Tensor:
    """Sobel x/y responses [N,2,H,W] of a border-padded [N,1,H+2,W+2] map.

    Evaluated as a central difference followed by [1, 2, 1] smoothing, so a
    flat map gives exactly zero.
    """
    _check4(x, "sobel_xy input")
    if x.shape[1] != 1:
        raise ShapeError(f"sobel_xy expects 1 channel, got {x.shape[1]}")
    h, w = x.shape[2] - 2, x.shape[3] - 2
    if h < 1 or w < 1:
        raise ShapeError(f"sobel_xy input {x.shape[2:]} is smaller than the 3x3 stencil")
    p = x.data[:, 0]
    dx = p[:, :, 2:] - p[:, :, :-2]
    dy = p[:, 2:, :] - p[:, :-2, :]
    gx = dx[:, :-2] + 2.0 * dx[:, 1:-1] + dx[:, 2:]
    gy = dy[:, :, :-2] + 2.0 * dy[:, :, 1:-1] + dy[:, :, 2:]
    out = np.stack([gx, gy], axis=1)

    def backward(g):
        gp = np.zeros_like(p)
        for t, wgt in enumerate(_SMOOTH):
            # x stencil: smoothing along rows, difference along columns
            gp[:, t : t + h, 2:] += wgt * g[:, 0]
            gp[:, t : t + h, : w] -= wgt * g[:, 0]
            gp[:, 2:, t : t + w] += wgt * g[:, 1]
            gp[:, : h, t : t + w] -= wgt * g[:, 1]
        return (gp[:, None],)

    return make_output("sobel_xy", out, (x,), backward)


def pad_replicate(x: Tensor, p: int = 1) -> Tensor:
    """Pad H and W by repeating the border values."""
    _check4(x, "pad_replicate input")
    h, w = x.shape[-2:]
    rh = np.eye(h)[np.clip(np.arange(-p, h + p), 0, h - 1)]
    rw = np.eye(w)[np.clip(np.arange(-p, w + p), 0, w - 1)]
    out = rh @ x.data @ rw.T

    def backward(g):
        return (rh.T @ g @ rw,)

    return make_output("pad_replicate", out, (x,), backward)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ValueError("concat_channels needs at least one part")
    for t in parts:
        _check4(t, "concat_channels part")
    n, _, h, w = parts[0].shape
    for i, t in enumerate(parts):
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ShapeError(
                f"concat_channels: part {i} has N,H,W={(t.shape[0],) + t.shape[2:]}, expected {(n, h, w)}"
            )
    sizes = [t.shape[1] for t in parts]
    out = np.concatenate([t.data for t in parts], axis=1)
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[:, a:b] for a, b in zip(bounds[:-1], bounds[1:]))

    return make_output("concat_channels", out, parts, backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _check4(x, "slice_channels input")
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_channels: [{start}:{stop}] out of range for C={x.shape[1]}")
    out = x.data[:, start:stop]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return make_output("slice_channels", out, (x,), backward)


def broadcast_spatial(x: Tensor, h: int, w: int) -> Tensor:
    """Repeat a [N,C,1,1] tensor over an h x w grid."""
    _check4(x, "broadcast_spatial input")
    if x.shape[2:] != (1, 1):
        raise ShapeError(f"broadcast_spatial: expected 1x1 spatial input, got {x.shape[2:]}")
    out = np.broadcast_to(x.data, x.shape[:2] + (h, w))

    def backward(g):
        return (g.sum(axis=(2, 3), keepdims=True),)

    return make_output("broadcast_spatial", out, (x,), backward)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes differ, {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return make_output("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return make_output("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return make_output("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    out = a.data / b.data
    return make_output("div", out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def eltwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    if op == "mul":
        return mul(a, b)
    if op == "add":
        return add(a, b)
    raise ValueError(f"unknown eltwise op {op!r}")


def scale(x: Tensor, c: float) -> Tensor:
    return make_output("scale", x.data * c, (x,), lambda g: (g * c,))


def add_const(x: Tensor, c: float) -> Tensor:
    return make_output("add_const", x.data + c, (x,), lambda g: (g,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _note_switches(mask)
    return make_output("relu", x.data * mask, (x,), lambda g: (g * mask,))


def tanh_act(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_output("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return make_output("sqrt", out, (x,), lambda g: (g * 0.5 / out,))


def log(x: Tensor) -> Tensor:
    return make_output("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; the gradient is zero where clamping is active."""
    inside = (x.data >= lo) & (x.data <= hi)
    _note_switches(inside)
    return make_output("clip", np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def sum_all(x: Tensor) -> Tensor:
    return make_output("sum_all", np.asarray(x.data.sum()), (x,), lambda g: (np.full(x.shape, g),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return make_output(
        "mean_all", np.asarray(x.data.mean()), (x,), lambda g: (np.full(x.shape, g / n),)
    )


def pixel_softmax2(logits: Tensor) -> Tensor:
    """Softmax over the channel axis of a two-channel map."""
    _check4(logits, "pixel_softmax2 input")
    if logits.shape[1] != 2:
        raise ShapeError(f"pixel_softmax2: expected 2 channels, got {logits.shape[1]}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return make_output("pixel_softmax2", p, (logits,), backward)


def hflip(x: Tensor) -> Tensor:
    out = x.data[..., ::-1]
    return make_output("hflip", out, (x,), lambda g: (g[..., ::-1],))
