"""Spiking building blocks: IF activation and the encoder/residual/decoder
stages the flow network assembles.

All synapses are depthwise+pointwise separable convolutions without biases;
only prediction heads may carry biases. Spike tensors are exactly binary in
spike mode, and the surrogate (sigmoid) derivative is used for backprop in
both spike and soft mode, so the two modes share gradients given equal
pre-activations.
"""

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops


@dataclass
class IFActivation:
    """Stateless integrate-and-fire: fire iff potential > threshold.

    The membrane resets after every forward pass, so repeated calls on the
    same input produce identical outputs.
    """

    threshold: float = 1.0
    surrogate_alpha: float = 4.0
    mode: str = "spike"  # "spike" -> {0,1} Heaviside, "soft" -> sigmoid

    def __call__(self, potential):
        return ops.if_activation(potential, self.threshold, self.surrogate_alpha, self.mode)


class ParamStore:
    """Creates and registers named weight tensors with seeded initialization."""

    def __init__(self, rng, dtype=np.float32):
        self.rng = rng
        self.dtype = np.dtype(dtype)
        self.params = {}

    def uniform(self, name, shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        data = self.rng.uniform(-bound, bound, size=shape).astype(self.dtype)
        return self._register(name, data)

    def zeros(self, name, shape):
        return self._register(name, np.zeros(shape, dtype=self.dtype))

    def _register(self, name, data):
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t


class SeparableConv3d:
    """Depthwise (C,kt,kh,kw) then pointwise (Cout,C); no bias."""

    def __init__(self, store, name, cin, cout, kt, ks, spatial_stride=1):
        self.dw = store.uniform(f"{name}.dw", (cin, kt, ks, ks), fan_in=kt * ks * ks)
        self.pw = store.uniform(f"{name}.pw", (cout, cin), fan_in=cin)
        self.spatial_stride = spatial_stride

    def __call__(self, x):
        return ops.pointwise_conv(ops.depthwise_conv3d(x, self.dw, self.spatial_stride), self.pw)


class SeparableConv2d:
    def __init__(self, store, name, cin, cout, ks, stride=1):
        self.dw = store.uniform(f"{name}.dw", (cin, ks, ks), fan_in=ks * ks)
        self.pw = store.uniform(f"{name}.pw", (cout, cin), fan_in=cin)
        self.stride = stride

    def __call__(self, x):
        return ops.pointwise_conv(ops.depthwise_conv2d(x, self.dw, self.stride), self.pw)


class EncoderBlock3d:
    """3D separable conv (valid temporal) -> IF -> spatial downsample.

    Halves H and W, doubles channels, shrinks T by kt - 1. In maxpool mode
    pooling runs per temporal slice after the spikes (max of {0,1} stays
    binary); the strided ablation moves the downsampling into the depthwise
    spatial stride instead.
    """

    def __init__(self, store, name, cin, kt, ks, activation, downsample="maxpool"):
        if downsample not in ("maxpool", "strided"):
            raise ValueError(f"unknown downsample {downsample!r}")
        stride = 2 if downsample == "strided" else 1
        self.conv = SeparableConv3d(store, name, cin, 2 * cin, kt, ks, spatial_stride=stride)
        self.act = activation
        self.downsample = downsample

    def __call__(self, x):
        spikes = self.act(self.conv(x))
        if self.downsample == "maxpool":
            spikes = ops.maxpool2d(spikes, 2, 2)
        return spikes


class EncoderBlock2d:
    """2D ablation counterpart: temporal context lives in the channel axis."""

    def __init__(self, store, name, cin, ks, activation, downsample="maxpool"):
        if downsample not in ("maxpool", "strided"):
            raise ValueError(f"unknown downsample {downsample!r}")
        stride = 2 if downsample == "strided" else 1
        self.conv = SeparableConv2d(store, name, cin, 2 * cin, ks, stride=stride)
        self.act = activation
        self.downsample = downsample

    def __call__(self, x):
        spikes = self.act(self.conv(x))
        if self.downsample == "maxpool":
            spikes = ops.maxpool2d(spikes, 2, 2)
        return spikes


class ResidualBlock:
    """Two separable conv + IF stages with a sum skip into the second stage's
    potentials; input and output shapes are identical."""

    def __init__(self, store, name, channels, ks, activation):
        self.conv1 = SeparableConv2d(store, f"{name}.conv1", channels, channels, ks)
        self.conv2 = SeparableConv2d(store, f"{name}.conv2", channels, channels, ks)
        self.act = activation

    def __call__(self, x):
        hidden = self.act(self.conv1(x))
        return self.act(ops.add(self.conv2(hidden), x))


class DecoderBlock:
    """Upsample x2, merge the encoder skip, separable conv, IF.

    concat mode concatenates the skip on the channel axis before the conv;
    sum mode adds the skip spikes into the conv-output potentials (the
    weight-tied equivalent), which keeps the channel ledger consistent when
    skip channels equal the block's output channels.
    """

    def __init__(self, store, name, cin, cskip, cout, ks, activation, skip_mode="concat"):
        if skip_mode not in ("concat", "sum"):
            raise ValueError(f"unknown skip_mode {skip_mode!r}")
        if skip_mode == "sum" and cskip != cout:
            raise ValueError(
                f"sum skip requires skip channels ({cskip}) == output channels ({cout})"
            )
        conv_in = cin + cskip if skip_mode == "concat" else cin
        self.conv = SeparableConv2d(store, name, conv_in, cout, ks)
        self.act = activation
        self.skip_mode = skip_mode

    def __call__(self, x, skip):
        up = ops.upsample_nn(x, 2)
        if up.shape[1:] != skip.shape[1:]:
            raise ValueError(
                f"skip spatial dims {skip.shape[1:]} != upsampled dims {up.shape[1:]}"
            )
        if self.skip_mode == "concat":
            potentials = self.conv(ops.concat([up, skip], axis=0))
        else:
            potentials = ops.add(self.conv(up), skip)
        return self.act(potentials)


class PredictionHead:
    """Pointwise conv to the 2 flow channels, then NN-upsample to full scale."""

    def __init__(self, store, name, cin, upsample_factor, bias=True):
        self.w = store.uniform(f"{name}.w", (2, cin), fan_in=cin)
        self.b = store.zeros(f"{name}.b", (2,)) if bias else None
        self.factor = upsample_factor

    def __call__(self, x):
        return ops.upsample_nn(ops.pointwise_conv(x, self.w, self.b), self.factor)


class OutputPool:
    """Non-firing IF potential pool: each head contribution adds in; the
    accumulated potential is read directly as the flow prediction."""

    def __init__(self):
        self.potential = None

    def accumulate(self, head_out):
        if self.potential is None:
            self.potential = head_out
        else:
            self.potential = ops.add(self.potential, head_out)
        return self.potential


def accumulate_prediction(pool: OutputPool, head_out):
    """Add one head's (2, H, W) contribution; returns the updated pool."""
    pool.accumulate(head_out)
    return pool
