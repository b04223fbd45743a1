"""Differentiable operations over :class:`~spikeflow.autodiff.tensor.Tensor`.

Conventions, fixed across the library:

* convolutions are cross-correlations (no kernel flip);
* spatial padding is zero-filled "same" for odd kernels, temporal padding is
  never applied (valid), so a temporal kernel of size kt shrinks T by kt - 1;
* max-pool ties resolve to the first element in row-major window order;
* ``sqrt`` returns subgradient 0 at 0 (keeps vector-norm losses stable when
  prediction equals ground truth).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .tensor import ShapeError, Tensor, make_result


def _require_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} must match exactly")


# ---------------------------------------------------------------------------
# elementwise / structural
# ---------------------------------------------------------------------------

def add(a, b):
    _require_same_shape(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return make_result(a.data + b.data, (a, b), backward)


def sub(a, b):
    _require_same_shape(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(-g)

    return make_result(a.data - b.data, (a, b), backward)


def mul(a, b):
    _require_same_shape(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * b.data)
        if b.requires_grad:
            b.accumulate_grad(g * a.data)

    return make_result(a.data * b.data, (a, b), backward)


def div(a, b):
    _require_same_shape(a, b, "div")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g / b.data)
        if b.requires_grad:
            b.accumulate_grad(-g * a.data / (b.data * b.data))

    return make_result(a.data / b.data, (a, b), backward)


def scale(a, s):
    s = float(s)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * s)

    return make_result(a.data * s, (a,), backward)


def add_scalar(a, s):
    s = float(s)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)

    return make_result(a.data + s, (a,), backward)


def square(a):
    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * (2.0 * a.data))

    return make_result(a.data * a.data, (a,), backward)


def sqrt(a):
    """Elementwise square root with subgradient 0 at 0; input must be >= 0."""
    if np.any(a.data < 0):
        raise ValueError("sqrt: negative input")
    y = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            nz = a.data > 0
            ga[nz] = g[nz] / (2.0 * y[nz])
            a.accumulate_grad(ga)

    return make_result(y, (a,), backward)


def acos(a):
    """Elementwise arccos; callers clamp the input away from +-1 first."""

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(-g / np.sqrt(1.0 - a.data * a.data))

    return make_result(np.arccos(a.data), (a,), backward)


def clamp(a, lo, hi):
    """Clip to [lo, hi]; gradient is zero wherever the input fell outside."""
    inside = (a.data > lo) & (a.data < hi)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * inside.astype(a.dtype))

    return make_result(np.clip(a.data, lo, hi), (a,), backward)


def sum_all(a):
    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(np.full_like(a.data, g))

    return make_result(np.asarray(a.data.sum(), dtype=a.dtype), (a,), backward)


def sum_axis(a, axis):
    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return make_result(a.data.sum(axis=axis), (a,), backward)


def reshape(a, shape):
    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.shape))

    return make_result(a.data.reshape(shape), (a,), backward)


def concat(tensors, axis):
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            i != axis and t.shape[i] != ref[i] for i in range(len(ref))
        ):
            raise ShapeError(
                f"concat: shape {t.shape} incompatible with {ref} off axis {axis}"
            )
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(idx)])

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def slice_last(a, axis):
    """Keep only the final index along ``axis`` (extent becomes 1)."""
    idx = [slice(None)] * len(a.shape)
    idx[axis] = slice(a.shape[axis] - 1, a.shape[axis])
    idx = tuple(idx)

    def backward(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            ga[idx] = g
            a.accumulate_grad(ga)

    return make_result(a.data[idx].copy(), (a,), backward)


def select_pixels(a, mask):
    """Gather valid pixels: (C, H, W) x boolean (H, W) -> (C, N)."""
    if a.data.ndim != 3 or mask.shape != a.shape[1:]:
        raise ShapeError(f"select_pixels: tensor {a.shape} vs mask {mask.shape}")

    def backward(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            ga[:, mask] = g
            a.accumulate_grad(ga)

    return make_result(a.data[:, mask].copy(), (a,), backward)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------

def _pad_spatial(x, pad):
    if pad == 0:
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return np.pad(x, width)


def conv2d(x, w, bias=None, stride=1, padding="same"):
    """Dense 2D cross-correlation: (Cin,H,W) x (Cout,Cin,kh,kw) -> (Cout,Ho,Wo)."""
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: input {x.shape} and weight {w.shape} must be 3D/4D")
    cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: input channels {cin} != weight channels {cin_w}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("conv2d: 'same' padding requires odd kernels")
        pad = kh // 2
        if kw // 2 != pad:
            raise ValueError("conv2d: 'same' padding requires square kernels")
    elif padding == "valid":
        pad = 0
    else:
        raise ValueError(f"conv2d: unknown padding {padding!r}")

    xp = _pad_spatial(x.data, pad)
    hp, wp = xp.shape[1:]
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d: kernel ({kh},{kw}) larger than padded input ({hp},{wp})")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(ho * wo, cin * kh * kw)
    wmat = w.data.reshape(cout, cin * kh * kw)
    out = (cols @ wmat.T).T.reshape(cout, ho, wo)
    if bias is not None:
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d: bias {bias.shape} != ({cout},)")
        out = out + bias.data[:, None, None]

    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        gmat = g.reshape(cout, ho * wo)
        if w.requires_grad:
            w.accumulate_grad((gmat @ cols).reshape(w.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(1, 2)))
        if x.requires_grad:
            gcols = (gmat.T @ wmat).reshape(ho, wo, cin, kh, kw)
            gxp = np.zeros_like(xp)
            for j in range(kh):
                for k in range(kw):
                    gxp[:, j : j + ho * stride : stride, k : k + wo * stride : stride] += (
                        gcols[:, :, :, j, k].transpose(2, 0, 1)
                    )
            gx = gxp[:, pad : pad + h, pad : pad + wd] if pad else gxp
            x.accumulate_grad(gx)

    return make_result(out, parents, backward)


def _depthwise(x, w, spatial_stride, squeeze_t):
    """Shared depthwise path over a (C, T, H, W) view; T may be 1."""
    c, t, h, wd = x.data.shape
    _, kt, kh, kw = w.data.shape
    if t < kt:
        raise ShapeError(
            f"depthwise conv: temporal extent {t} < kernel {kt}; valid convolution "
            f"would collapse to {t - kt + 1} frames"
        )
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("depthwise conv: spatial kernel must be odd for 'same' padding")
    s = int(spatial_stride)
    if s < 1:
        raise ValueError(f"depthwise conv: stride must be >= 1, got {s}")
    if h % s or wd % s:
        raise ShapeError(f"depthwise conv: spatial dims ({h},{wd}) not divisible by stride {s}")
    pad = kh // 2
    xp = _pad_spatial(x.data, pad)
    out = np.zeros((c, t - kt + 1, h // s, wd // s), dtype=x.dtype)
    if s == 1:
        kernels.dw3d_forward(xp, w.data, out)
    else:
        kernels.dw3d_forward_strided(xp, w.data, out, s)

    def backward(g):
        g = g.reshape(out.shape)
        g = np.ascontiguousarray(g)
        if w.requires_grad:
            gw = np.zeros_like(w.data)
            if s == 1:
                kernels.dw3d_backward_weight(xp, g, gw)
            else:
                kernels.dw3d_backward_weight_strided(xp, g, gw, s)
            w.accumulate_grad(gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            if s == 1:
                kernels.dw3d_backward_input(g, w.data, gxp)
            else:
                kernels.dw3d_backward_input_strided(g, w.data, gxp, s)
            gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
            x.accumulate_grad(gx.reshape(x.shape))

    data = out[:, 0] if squeeze_t else out
    return make_result(data, (x, w), backward)


def depthwise_conv3d(x, w, spatial_stride=1):
    """Per-channel 3D conv: (C,T,H,W) x (C,kt,kh,kw) -> (C, T-kt+1, H/s, W/s).

    Temporal axis is unpadded (valid); spatial axes keep 'same' zero padding.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"depthwise_conv3d: input {x.shape}, weight {w.shape}")
    if x.shape[0] != w.shape[0]:
        raise ShapeError(f"depthwise_conv3d: channels {x.shape[0]} != {w.shape[0]}")
    return _depthwise(x, w, spatial_stride, squeeze_t=False)


def depthwise_conv2d(x, w, stride=1):
    """Per-channel 2D conv: (C,H,W) x (C,kh,kw) -> (C, H/s, W/s), 'same' padded."""
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError(f"depthwise_conv2d: input {x.shape}, weight {w.shape}")
    if x.shape[0] != w.shape[0]:
        raise ShapeError(f"depthwise_conv2d: channels {x.shape[0]} != {w.shape[0]}")
    x4 = reshape(x, (x.shape[0], 1, x.shape[1], x.shape[2]))
    w4 = reshape(w, (w.shape[0], 1, w.shape[1], w.shape[2]))
    return _depthwise(x4, w4, stride, squeeze_t=True)


def pointwise_conv(x, w, bias=None):
    """1x1(x1) channel-mixing conv: (Cin, ...) x (Cout, Cin) -> (Cout, ...)."""
    if w.data.ndim != 2:
        raise ShapeError(f"pointwise_conv: weight must be (Cout, Cin), got {w.shape}")
    cin = x.shape[0]
    cout, cin_w = w.shape
    if cin != cin_w:
        raise ShapeError(f"pointwise_conv: input channels {cin} != weight channels {cin_w}")
    rest = x.shape[1:]
    xmat = x.data.reshape(cin, -1)
    out = w.data @ xmat
    if bias is not None:
        if bias.shape != (cout,):
            raise ShapeError(f"pointwise_conv: bias {bias.shape} != ({cout},)")
        out = out + bias.data[:, None]

    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        gmat = g.reshape(cout, -1)
        if w.requires_grad:
            w.accumulate_grad(gmat @ xmat.T)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(gmat.sum(axis=1))
        if x.requires_grad:
            x.accumulate_grad((w.data.T @ gmat).reshape(x.shape))

    return make_result(out.reshape((cout,) + rest), parents, backward)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def maxpool2d(x, k=2, stride=2):
    """Window maximum over the two trailing axes; leading axes pass through.

    Ties route the gradient to the first maximum in row-major window order.
    """
    if k != stride:
        raise ValueError("maxpool2d: only k == stride supported")
    *lead, h, wd = x.shape
    if h % k or wd % k:
        raise ShapeError(f"maxpool2d: dims ({h},{wd}) not divisible by window {k}")
    ho, wo = h // k, wd // k
    n = int(np.prod(lead, dtype=np.int64)) if lead else 1
    windows = (
        x.data.reshape(n, ho, k, wo, k).transpose(0, 1, 3, 2, 4).reshape(n, ho, wo, k * k)
    )
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        if x.requires_grad:
            gw = np.zeros((n, ho, wo, k * k), dtype=x.dtype)
            np.put_along_axis(gw, idx[..., None], g.reshape(n, ho, wo, 1), axis=-1)
            gx = gw.reshape(n, ho, wo, k, k).transpose(0, 1, 3, 2, 4).reshape(x.shape)
            x.accumulate_grad(gx)

    return make_result(out.reshape(tuple(lead) + (ho, wo)), (x,), backward)


def upsample_nn(x, factor):
    """Nearest-neighbor upsample of the two trailing axes by an integer factor."""
    f = int(factor)
    if f < 1:
        raise ValueError(f"upsample_nn: factor must be >= 1, got {factor}")
    if f == 1:
        return reshape(x, x.shape)
    *lead, h, wd = x.shape
    out = np.repeat(np.repeat(x.data, f, axis=-2), f, axis=-1)

    def backward(g):
        g = g.reshape(tuple(lead) + (h, f, wd, f))
        if x.requires_grad:
            x.accumulate_grad(g.sum(axis=(-3, -1)))

    return make_result(out, (x,), backward)


# ---------------------------------------------------------------------------
# integrate-and-fire activation
# ---------------------------------------------------------------------------

def _sigmoid(z):
    # exp(-|z|) never overflows; both branches share it
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def if_activation(x, threshold=1.0, alpha=4.0, mode="spike"):
    """Stateless integrate-and-fire over membrane potentials.

    ``spike`` emits Heaviside(x - threshold) with the strict-> convention
    (potential exactly at threshold does not fire); ``soft`` emits
    sigmoid(alpha * (x - threshold)). Both modes backpropagate the sigmoid
    surrogate derivative evaluated at the same pre-activation, so spike-mode
    and soft-mode gradients are identical for identical inputs.
    """
    z = alpha * (x.data - threshold)
    if mode == "spike":
        out = (x.data > threshold).astype(x.dtype)
    elif mode == "soft":
        out = _sigmoid(z)
    else:
        raise ValueError(f"if_activation: unknown mode {mode!r}")

    def backward(g):
        if x.requires_grad:
            s = _sigmoid(z)
            x.accumulate_grad(g * (alpha * s * (1.0 - s)))

    return make_result(out, (x,), backward)
