"""The spiking flow U-Net: configuration, assembly, forward pass, parameter
accounting.

Default topology (3d mode): a separable 3D stem raises the polarity channels
to 32, four 3D encoder stages double channels and halve resolution while the
unpadded temporal convolutions collapse the frame axis 21 -> 17 -> 13 -> 9 ->
5 -> 1, a residual bottleneck works on the collapsed 2D tensor, and four
decoder stages climb back to full resolution. Every decoder feeds a 2-channel
prediction head whose full-scale contribution accumulates in a non-firing
output pool; the pool snapshots after each head are the network's successive
flow estimates.
"""

from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import Tensor, ops
from .layers import (
    DecoderBlock,
    EncoderBlock2d,
    EncoderBlock3d,
    IFActivation,
    OutputPool,
    ParamStore,
    PredictionHead,
    ResidualBlock,
    SeparableConv2d,
    SeparableConv3d,
)


@dataclass
class ModelConfig:
    input_channels: int = 2          # 2 = separate polarities, 1 = combined
    stem_channels: int = 32
    num_encoders: int = 4
    spatial_kernel: int = 7
    temporal_kernel: int = 5
    num_frames: int = 21
    num_residuals: int = 1
    skip_mode: str = "concat"        # decoder skips: "concat" | "sum"
    bottleneck_skip: str = "sum"     # last encoder -> first decoder: "sum" | "concat"
    downsample: str = "maxpool"      # "maxpool" | "strided"
    encoding: str = "3d"             # "3d" | "2d"
    sensor_dims: tuple = (480, 640)  # (H, W)
    threshold: float = 1.0
    surrogate_alpha: float = 4.0
    head_bias: bool = True
    activation: str = "spike"        # "spike" | "soft" (soft: gradient checking only)
    dtype: str = "float32"

    def validate(self):
        if self.input_channels not in (1, 2):
            raise ValueError(f"input_channels must be 1 or 2, got {self.input_channels}")
        if self.spatial_kernel % 2 == 0:
            raise ValueError(f"spatial_kernel must be odd, got {self.spatial_kernel}")
        if self.skip_mode not in ("concat", "sum"):
            raise ValueError(f"skip_mode must be concat|sum, got {self.skip_mode!r}")
        if self.bottleneck_skip not in ("concat", "sum"):
            raise ValueError(f"bottleneck_skip must be concat|sum, got {self.bottleneck_skip!r}")
        if self.downsample not in ("maxpool", "strided"):
            raise ValueError(f"downsample must be maxpool|strided, got {self.downsample!r}")
        if self.encoding not in ("3d", "2d"):
            raise ValueError(f"encoding must be 3d|2d, got {self.encoding!r}")
        if self.activation not in ("spike", "soft"):
            raise ValueError(f"activation must be spike|soft, got {self.activation!r}")
        if self.encoding == "3d":
            consumed = (self.num_encoders + 1) * (self.temporal_kernel - 1)
            remaining = self.num_frames - consumed
            if remaining != 1:
                raise ValueError(
                    f"temporal collapse mismatch: {self.num_frames} frames - "
                    f"{self.num_encoders + 1} stages x (kt-1={self.temporal_kernel - 1}) "
                    f"= {remaining}, expected exactly 1 at the bottleneck"
                )
        h, w = self.sensor_dims
        divisor = 2 ** self.num_encoders
        if h % divisor or w % divisor:
            raise ValueError(
                f"sensor dims ({h},{w}) must be divisible by 2^{self.num_encoders} = {divisor}"
            )

    def to_dict(self):
        d = asdict(self)
        d["sensor_dims"] = list(self.sensor_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["sensor_dims"] = tuple(d["sensor_dims"])
        return cls(**d)


@dataclass
class ForwardTrace:
    """Per-decoder accumulated pool snapshots; the last one is the prediction."""

    snapshots: list
    spikes: dict = field(default_factory=dict)

    @property
    def prediction(self):
        return self.snapshots[-1]


class FlowNet:
    """Assembled network; weights are immutable during a forward pass."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(seed)
        store = ParamStore(rng, self.dtype)
        self.activation = IFActivation(config.threshold, config.surrogate_alpha, config.activation)

        ks = config.spatial_kernel
        kt = config.temporal_kernel
        c = config.stem_channels
        if config.encoding == "3d":
            self.stem = SeparableConv3d(store, "stem", config.input_channels, c, kt, ks)
        else:
            self.stem = SeparableConv2d(store, "stem", config.input_channels * config.num_frames, c, ks)

        self.encoders = []
        for i in range(config.num_encoders):
            name = f"enc{i + 1}"
            if config.encoding == "3d":
                block = EncoderBlock3d(store, name, c, kt, ks, self.activation, config.downsample)
            else:
                block = EncoderBlock2d(store, name, c, ks, self.activation, config.downsample)
            self.encoders.append(block)
            c *= 2

        self.residuals = [
            ResidualBlock(store, f"res{i + 1}", c, ks, self.activation)
            for i in range(config.num_residuals)
        ]

        # Channel ledger into the decoders: the bottleneck merge doubles the
        # width under the concat ablation, sum keeps it.
        dec_in = 2 * c if config.bottleneck_skip == "concat" else c
        self.decoders = []
        self.heads = []
        cout = c // 2
        for i in range(config.num_encoders):
            cskip = cout  # matching encoder stage output width
            self.decoders.append(
                DecoderBlock(store, f"dec{i + 1}", dec_in, cskip, cout, ks, self.activation, config.skip_mode)
            )
            self.heads.append(
                PredictionHead(store, f"head{i + 1}", cout, 2 ** (config.num_encoders - 1 - i), config.head_bias)
            )
            dec_in = cout
            cout //= 2

        self.params = store.params

    # -- parameter access ---------------------------------------------------

    def parameters(self):
        return self.params

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def count_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def describe_parameters(self):
        return [(name, tuple(p.shape), p.size) for name, p in self.params.items()]

    def state_arrays(self):
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_arrays(self, arrays):
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, p in self.params.items():
            arr = arrays[name]
            if arr.shape != p.data.shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)

    def set_activation(self, mode: str):
        """Switch spike/soft globally (soft exists for gradient verification)."""
        if mode not in ("spike", "soft"):
            raise ValueError(f"unknown activation mode {mode!r}")
        self.activation.mode = mode
        self.config.activation = mode

    # -- forward ------------------------------------------------------------

    def _check_input(self, x):
        cfg = self.config
        expect = (cfg.input_channels, cfg.num_frames) + tuple(cfg.sensor_dims)
        if x.shape != expect:
            raise ValueError(f"input shape {x.shape} != expected {expect}")

    def forward(self, x, collect_spikes: bool = False) -> ForwardTrace:
        """Run the multi-stage forward pass on one (C, T, H, W) window."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        self._check_input(x)
        cfg = self.config
        spikes = {}

        if cfg.encoding == "2d":
            c, t, h, w = x.shape
            x = ops.reshape(x, (c * t, h, w))

        cur = self.activation(self.stem(x))
        if collect_spikes:
            spikes["stem"] = cur
        skips = [self._skip_slice(cur)]
        for i, enc in enumerate(self.encoders):
            cur = enc(cur)
            if collect_spikes:
                spikes[f"enc{i + 1}"] = cur
            if i < len(self.encoders) - 1:
                skips.append(self._skip_slice(cur))

        if cfg.encoding == "3d":
            if cur.shape[1] != 1:
                raise ValueError(
                    f"temporal dimension reached the bottleneck uncollapsed: extent {cur.shape[1]}"
                )
            cur = ops.reshape(cur, (cur.shape[0],) + cur.shape[2:])

        bottleneck_in = cur
        for res in self.residuals:
            cur = res(cur)
        if collect_spikes:
            spikes["bottleneck"] = cur
        if cfg.bottleneck_skip == "sum":
            cur = ops.add(cur, bottleneck_in)
        else:
            cur = ops.concat([cur, bottleneck_in], axis=0)

        pool = OutputPool()
        snapshots = []
        for i, (dec, head) in enumerate(zip(self.decoders, self.heads)):
            cur = dec(cur, skips[-(i + 1)])
            if collect_spikes:
                spikes[f"dec{i + 1}"] = cur
            snapshots.append(pool.accumulate(head(cur)))

        return ForwardTrace(snapshots=snapshots, spikes=spikes)

    def _skip_slice(self, t):
        """Skips carry only the most recent temporal index of a stage output."""
        if self.config.encoding == "2d":
            return t
        sliced = ops.slice_last(t, axis=1)
        return ops.reshape(sliced, (t.shape[0],) + t.shape[2:])


def build_model(config: ModelConfig, seed: int = 0) -> FlowNet:
    """Deterministically initialize the network; same seed, same bits."""
    return FlowNet(config, seed)


def count_parameters(model: FlowNet) -> int:
    return model.count_parameters()
