"""Finite-difference verification of every backward rule.

Central differences at float64 (h = 1e-5) against the tape gradients, with
the error reported as ||g_fd - g_tape||_inf normalized by the larger gradient
norm. The end-to-end check runs a soft-mode toy network (2 encoders, 8x8
input) and differentiates the combined trace loss with respect to every
parameter.
"""

import numpy as np

from .autodiff import Tensor, ops
from .losses import MaskedFlowPair, loss_ang, loss_mod, loss_relative, trace_loss
from .model import ModelConfig, build_model

DEFAULT_H = 1e-5
PASS_THRESHOLD = 1e-4


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def finite_difference(f, x, h=DEFAULT_H):
    """Central-difference gradient of scalar f with respect to array x (mutated in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def check_gradients(build_loss, tensors, h=DEFAULT_H):
    """Compare tape gradients of ``build_loss()`` against finite differences.

    ``tensors`` maps names to requires-grad Tensors referenced by the loss
    builder; the builder must rebuild the graph from current tensor data on
    every call. Returns the worst relative error across all tensors.
    """
    for t in tensors.values():
        t.zero_grad()
    build_loss().backward()
    tape_grads = {name: t.grad.copy() for name, t in tensors.items()}

    worst = 0.0
    for name, t in tensors.items():
        fd = finite_difference(lambda: build_loss().item(), t.data, h)
        worst = max(worst, relative_error(fd, tape_grads[name]))
    for t in tensors.values():
        t.zero_grad()
    return worst


def _param(rng, shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)


def _projection(rng, shape):
    return Tensor(rng.standard_normal(shape), dtype=np.float64)


def check_conv2d(seed=0):
    rng = np.random.default_rng(seed)
    x = _param(rng, (2, 6, 6))
    w = _param(rng, (3, 2, 3, 3), 0.5)
    b = _param(rng, (3,), 0.1)
    proj = _projection(rng, (3, 6, 6))

    def loss():
        return ops.sum_all(ops.mul(ops.conv2d(x, w, b, stride=1, padding="same"), proj))

    return check_gradients(loss, {"x": x, "w": w, "b": b})


def check_depthwise_conv3d(seed=0):
    rng = np.random.default_rng(seed)
    x = _param(rng, (2, 5, 6, 6))
    w = _param(rng, (2, 3, 3, 3), 0.5)
    proj = _projection(rng, (2, 3, 6, 6))

    def loss():
        return ops.sum_all(ops.mul(ops.depthwise_conv3d(x, w), proj))

    err = check_gradients(loss, {"x": x, "w": w})

    x2 = _param(rng, (2, 4, 6, 6))
    w2 = _param(rng, (2, 2, 3, 3), 0.5)
    proj2 = _projection(rng, (2, 3, 3, 3))

    def loss_strided():
        return ops.sum_all(ops.mul(ops.depthwise_conv3d(x2, w2, spatial_stride=2), proj2))

    return max(err, check_gradients(loss_strided, {"x": x2, "w": w2}))


def check_pointwise(seed=0):
    rng = np.random.default_rng(seed)
    x = _param(rng, (3, 4, 5))
    w = _param(rng, (2, 3), 0.5)
    b = _param(rng, (2,), 0.1)
    proj = _projection(rng, (2, 4, 5))

    def loss():
        return ops.sum_all(ops.mul(ops.pointwise_conv(x, w, b), proj))

    return check_gradients(loss, {"x": x, "w": w, "b": b})


def check_maxpool(seed=0):
    rng = np.random.default_rng(seed)
    x = _param(rng, (2, 6, 6))  # continuous values: ties have measure zero
    proj = _projection(rng, (2, 3, 3))

    def loss():
        return ops.sum_all(ops.mul(ops.maxpool2d(x, 2, 2), proj))

    return check_gradients(loss, {"x": x})


def check_upsample(seed=0):
    rng = np.random.default_rng(seed)
    x = _param(rng, (2, 3, 3))
    proj = _projection(rng, (2, 6, 6))

    def loss():
        return ops.sum_all(ops.mul(ops.upsample_nn(x, 2), proj))

    return check_gradients(loss, {"x": x})


def check_if_soft(seed=0):
    rng = np.random.default_rng(seed)
    x = _param(rng, (3, 4, 4))
    proj = _projection(rng, (3, 4, 4))

    def loss():
        return ops.sum_all(ops.mul(ops.if_activation(x, 1.0, 4.0, "soft"), proj))

    return check_gradients(loss, {"x": x})


def _loss_fixture(seed):
    rng = np.random.default_rng(seed)
    pred = _param(rng, (2, 5, 5))
    gt = rng.standard_normal((2, 5, 5)) + 0.5  # keep norms away from zero
    valid = rng.random((5, 5)) < 0.7
    valid.flat[0] = True
    return pred, gt, valid


def check_loss_mod(seed=0):
    pred, gt, valid = _loss_fixture(seed)
    return check_gradients(lambda: loss_mod(MaskedFlowPair(pred, gt, valid)), {"pred": pred})


def check_loss_ang(seed=0):
    pred, gt, valid = _loss_fixture(seed)
    return check_gradients(lambda: loss_ang(MaskedFlowPair(pred, gt, valid)), {"pred": pred})


def check_loss_relative(seed=0):
    pred, gt, valid = _loss_fixture(seed)
    return check_gradients(lambda: loss_relative(MaskedFlowPair(pred, gt, valid)), {"pred": pred})


def toy_config(skip_mode="concat", downsample="maxpool", encoding="3d"):
    """2-encoder / 2-decoder network small enough for exhaustive FD."""
    return ModelConfig(
        input_channels=2,
        stem_channels=4,
        num_encoders=2,
        spatial_kernel=3,
        temporal_kernel=3,
        num_frames=7,
        num_residuals=1,
        skip_mode=skip_mode,
        downsample=downsample,
        encoding=encoding,
        sensor_dims=(8, 8),
        activation="soft",
        dtype="float64",
    )


def check_end_to_end(seed=0):
    rng = np.random.default_rng(seed)
    model = build_model(toy_config(), seed=seed)
    x = rng.poisson(1.0, size=(2, 7, 8, 8)).astype(np.float64)
    gt = rng.standard_normal((2, 8, 8)) + 0.5
    valid = rng.random((8, 8)) < 0.8
    valid.flat[0] = True

    def loss():
        trace = model.forward(Tensor(x))
        return trace_loss(trace, gt, valid, "combined")

    return check_gradients(loss, model.parameters())


ALL_CHECKS = [
    ("conv2d", check_conv2d),
    ("depthwise_conv3d", check_depthwise_conv3d),
    ("pointwise_conv", check_pointwise),
    ("maxpool2d", check_maxpool),
    ("upsample_nn", check_upsample),
    ("if_soft", check_if_soft),
    ("loss_mod", check_loss_mod),
    ("loss_ang", check_loss_ang),
    ("loss_relative", check_loss_relative),
    ("end_to_end", check_end_to_end),
]


def run_suite(seed=0):
    """Run every check; returns [(name, max_relative_error)]."""
    return [(name, fn(seed)) for name, fn in ALL_CHECKS]
