"""Bit-exact binary file formats and flow-image rendering.

Three little-endian packed formats (magic-tagged, no compression):

* ``EVT1`` events:      "EVT1" | W u16 | H u16 | count u64 | records
                        (x u16, y u16, t u64, p i8), timestamp-sorted
* ``FLW1`` flow maps:   "FLW1" | W u16 | H u16 | u float32 plane |
                        v float32 plane | validity u8 plane (1 = valid)
* ``HST1`` histograms:  "HST1" | C,T,H,W u16 | frame_us u64 | t0_us u64 |
                        polarity u8 (0 separate, 1 combined) | counts u32
* ``CKP1`` checkpoints: "CKP1" | header_len u64 | JSON header | named blobs

Readers validate magic, payload length against the header (truncation and
trailing garbage both fail), bounds, and ordering. Where precision matters
(checkpoints), blobs keep their in-memory dtype so round-trips are bit-exact.

Flow rendering maps each vector to an Lab color: L* = 100 * min(|f|/max, 1),
(a*, b*) = 60 * (L*/100) * (cos th, sin th) with th = atan2(v, u), then Lab ->
XYZ (D65 white: 0.95047, 1.0, 1.08883) -> linear sRGB -> gamma. Invalid
pixels render black; output is a binary PPM (P6).
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .events import EVENT_DTYPE, FlowMap, HistogramSequence, validate_events

CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    """Malformed or truncated file content."""


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: expected {n} bytes for {what}, got {len(buf)}")
    return buf


def _expect_eof(f):
    if f.read(1):
        raise FormatError("trailing bytes after payload")


# ---------------------------------------------------------------------------
# events
# ---------------------------------------------------------------------------

def write_events(path, events, sensor_dims):
    events = np.asarray(events, dtype=EVENT_DTYPE)
    validate_events(events, sensor_dims)
    h, w = sensor_dims
    with open(path, "wb") as f:
        f.write(b"EVT1")
        f.write(struct.pack("<HHQ", w, h, events.size))
        f.write(events.tobytes())


def read_events(path):
    """Returns (events, (H, W)); rejects bad magic, bounds, and ordering."""
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != b"EVT1":
            raise FormatError(f"{path}: bad magic, expected EVT1")
        w, h, count = struct.unpack("<HHQ", _read_exact(f, 12, "header"))
        payload = _read_exact(f, count * EVENT_DTYPE.itemsize, f"{count} event records")
        _expect_eof(f)
    events = np.frombuffer(payload, dtype=EVENT_DTYPE).copy()
    validate_events(events, (h, w))
    return events, (h, w)


# ---------------------------------------------------------------------------
# flow maps
# ---------------------------------------------------------------------------

def write_flow(path, flow: FlowMap):
    h, w = flow.sensor_dims
    with open(path, "wb") as f:
        f.write(b"FLW1")
        f.write(struct.pack("<HH", w, h))
        f.write(flow.u.astype("<f4").tobytes())
        f.write(flow.v.astype("<f4").tobytes())
        f.write(flow.valid.astype(np.uint8).tobytes())


def read_flow(path) -> FlowMap:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != b"FLW1":
            raise FormatError(f"{path}: bad magic, expected FLW1")
        w, h = struct.unpack("<HH", _read_exact(f, 4, "header"))
        plane = h * w
        u = np.frombuffer(_read_exact(f, 4 * plane, "u plane"), dtype="<f4").reshape(h, w)
        v = np.frombuffer(_read_exact(f, 4 * plane, "v plane"), dtype="<f4").reshape(h, w)
        valid = np.frombuffer(_read_exact(f, plane, "validity plane"), dtype=np.uint8).reshape(h, w)
        _expect_eof(f)
    return FlowMap(u.astype(np.float32), v.astype(np.float32), valid.astype(bool))


# ---------------------------------------------------------------------------
# histograms
# ---------------------------------------------------------------------------

_POLARITY_CODE = {"separate": 0, "combined": 1}
_POLARITY_NAME = {v: k for k, v in _POLARITY_CODE.items()}


def write_histograms(path, hist: HistogramSequence):
    c, t, h, w = hist.data.shape
    if np.any(hist.data < 0) or np.any(hist.data > np.iinfo(np.uint32).max):
        raise ValueError("histogram counts out of uint32 range")
    with open(path, "wb") as f:
        f.write(b"HST1")
        f.write(
            struct.pack(
                "<HHHHQQB", c, t, h, w, hist.frame_duration_us, hist.t0_us,
                _POLARITY_CODE[hist.polarity_mode],
            )
        )
        f.write(hist.data.astype("<u4").tobytes())


def read_histograms(path) -> HistogramSequence:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != b"HST1":
            raise FormatError(f"{path}: bad magic, expected HST1")
        c, t, h, w, dur, t0, mode = struct.unpack("<HHHHQQB", _read_exact(f, 25, "header"))
        if mode not in _POLARITY_NAME:
            raise FormatError(f"{path}: unknown polarity code {mode}")
        n = c * t * h * w
        data = np.frombuffer(_read_exact(f, 4 * n, "counts"), dtype="<u4")
        _expect_eof(f)
    return HistogramSequence(
        data.reshape(c, t, h, w).astype(np.int64), int(dur), int(t0), _POLARITY_NAME[mode]
    )


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class CheckpointBundle:
    model_config: dict
    params: dict
    optimizer_state: dict
    rng_state: dict
    epoch: int
    train_config: dict


def _blob_entries(params, optimizer_state):
    """Flatten named arrays (params + optimizer moment groups) to blob order."""
    entries = [("param/" + name, arr) for name, arr in params.items()]
    scalars = {}
    for key, value in (optimizer_state or {}).items():
        if isinstance(value, dict) and value and all(isinstance(v, np.ndarray) for v in value.values()):
            entries.extend((f"opt/{key}/{name}", arr) for name, arr in value.items())
        else:
            scalars[key] = value
    return entries, scalars


def write_checkpoint(path, model_config, params, optimizer_state=None, rng_state=None,
                     epoch=0, train_config=None):
    entries, opt_scalars = _blob_entries(params, optimizer_state)
    header = {
        "version": CHECKPOINT_VERSION,
        "model_config": model_config,
        "train_config": train_config,
        "epoch": int(epoch),
        "rng_state": rng_state,
        "optimizer": opt_scalars,
        "blobs": [
            {"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name}
            for name, arr in entries
        ],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(b"CKP1")
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, arr in entries:
            f.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def read_checkpoint(path) -> CheckpointBundle:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != b"CKP1":
            raise FormatError(f"{path}: bad magic, expected CKP1")
        (hlen,) = struct.unpack("<Q", _read_exact(f, 8, "header length"))
        try:
            header = json.loads(_read_exact(f, hlen, "JSON header"))
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: corrupt header: {e}") from e
        if header.get("version") != CHECKPOINT_VERSION:
            raise FormatError(
                f"{path}: checkpoint version {header.get('version')} != {CHECKPOINT_VERSION}"
            )
        arrays = {}
        for spec in header["blobs"]:
            dt = np.dtype(spec["dtype"]).newbyteorder("<")
            n = int(np.prod(spec["shape"], dtype=np.int64)) if spec["shape"] else 1
            buf = _read_exact(f, n * dt.itemsize, f"blob {spec['name']}")
            arrays[spec["name"]] = (
                np.frombuffer(buf, dtype=dt).reshape(spec["shape"]).astype(np.dtype(spec["dtype"]))
            )
        _expect_eof(f)

    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    optimizer_state = dict(header.get("optimizer") or {})
    for key, arr in arrays.items():
        if key.startswith("opt/"):
            _, group, name = key.split("/", 2)
            optimizer_state.setdefault(group, {})[name] = arr
    return CheckpointBundle(
        model_config=header["model_config"],
        params=params,
        optimizer_state=optimizer_state,
        rng_state=header.get("rng_state"),
        epoch=int(header.get("epoch", 0)),
        train_config=header.get("train_config"),
    )


# ---------------------------------------------------------------------------
# flow rendering
# ---------------------------------------------------------------------------

_LAB_CHROMA = 60.0
_XYZ_WHITE = (0.95047, 1.0, 1.08883)
_XYZ_TO_RGB = np.array(
    [
        [3.2406, -1.5372, -0.4986],
        [-0.9689, 1.8758, 0.0415],
        [0.0557, -0.2040, 1.0570],
    ]
)


def percentile_nearest_rank(values, q):
    """Nearest-rank percentile: the ceil(q*N)-th smallest value."""
    ordered = np.sort(np.asarray(values).ravel())
    if ordered.size == 0:
        raise ValueError("percentile of empty set")
    k = max(1, int(np.ceil(q * ordered.size)))
    return float(ordered[k - 1])


def _lab_to_rgb(l_star, a_star, b_star):
    fy = (l_star + 16.0) / 116.0
    fx = fy + a_star / 500.0
    fz = fy - b_star / 200.0
    delta = 6.0 / 29.0

    def finv(t):
        return np.where(t > delta, t ** 3, 3.0 * delta ** 2 * (t - 4.0 / 29.0))

    xyz = np.stack([_XYZ_WHITE[0] * finv(fx), _XYZ_WHITE[1] * finv(fy), _XYZ_WHITE[2] * finv(fz)])
    linear = np.tensordot(_XYZ_TO_RGB, xyz, axes=1)
    srgb = np.where(
        linear <= 0.0031308, 12.92 * linear, 1.055 * np.clip(linear, 0, None) ** (1 / 2.4) - 0.055
    )
    return np.clip(srgb, 0.0, 1.0)


def render_flow_image(flow: FlowMap, max_magnitude=None) -> bytes:
    """Encode a flow map as P6 PPM bytes.

    Lightness tracks |flow| / max_magnitude (clipped to 1), the a/b chroma
    plane encodes direction, so (u, v) and (-u, -v) get opposite colors at
    equal lightness. ``max_magnitude=None`` auto-scales to the 99th
    percentile (nearest rank) of valid magnitudes. Invalid pixels are black.
    """
    mag = np.hypot(flow.u, flow.v)
    if max_magnitude is None:
        valid_mags = mag[flow.valid]
        max_magnitude = percentile_nearest_rank(valid_mags, 0.99) if valid_mags.size else 0.0
    elif max_magnitude <= 0:
        raise ValueError(f"max_magnitude must be > 0, got {max_magnitude}")
    scale = max(float(max_magnitude), 1e-12)
    m = np.clip(mag / scale, 0.0, 1.0)
    theta = np.arctan2(flow.v, flow.u)
    l_star = 100.0 * m
    a_star = _LAB_CHROMA * m * np.cos(theta)
    b_star = _LAB_CHROMA * m * np.sin(theta)
    rgb = _lab_to_rgb(l_star, a_star, b_star)
    rgb[:, ~flow.valid] = 0.0
    h, w = flow.sensor_dims
    pixels = np.rint(rgb * 255.0).astype(np.uint8).transpose(1, 2, 0)
    return b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes()
