"""Event streams and their frame-histogram encoding.

An event is the tuple (x, y, t, p): pixel column, pixel row, timestamp in
integer microseconds, and polarity +1/-1. Streams are stored as numpy
structured arrays sorted by t. Frames are half-open intervals
[start, start + duration): an event exactly on a boundary belongs to the
later frame, so every event lands in exactly one frame.
"""

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

# In-memory and on-disk record layout (little-endian, packed).
EVENT_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "<i1")])

SEPARATE = "separate"  # channel 0 = positive counts, channel 1 = negative
COMBINED = "combined"  # single channel holding the sum of both polarities


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


def as_event_array(events) -> np.ndarray:
    """Normalize a list of Event tuples (or an existing array) to EVENT_DTYPE."""
    if isinstance(events, np.ndarray) and events.dtype == EVENT_DTYPE:
        return events
    arr = np.zeros(len(events), dtype=EVENT_DTYPE)
    for i, e in enumerate(events):
        arr[i] = (e[0], e[1], e[2], e[3])
    return arr


def validate_events(events: np.ndarray, sensor_dims) -> None:
    """Check bounds, polarity domain, and timestamp ordering; raise naming the first offender."""
    h, w = sensor_dims
    bad = np.flatnonzero((events["x"] >= w) | (events["y"] >= h))
    if bad.size:
        i = int(bad[0])
        raise ValueError(
            f"event {i} at ({events['x'][i]}, {events['y'][i]}) outside sensor bounds "
            f"(H={h}, W={w})"
        )
    bad = np.flatnonzero((events["p"] != 1) & (events["p"] != -1))
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"event {i} has polarity {events['p'][i]}, expected +1 or -1")
    if events.size > 1 and np.any(np.diff(events["t"].astype(np.int64)) < 0):
        i = int(np.flatnonzero(np.diff(events["t"].astype(np.int64)) < 0)[0])
        raise ValueError(f"timestamps decrease at event {i + 1}")


@dataclass
class HistogramSequence:
    """Per-frame event-count tensor of shape (C, T, H, W); the network input."""

    data: np.ndarray
    frame_duration_us: int
    t0_us: int
    polarity_mode: str = SEPARATE

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]

    @property
    def sensor_dims(self):
        return self.data.shape[2], self.data.shape[3]

    def flip_horizontal(self) -> "HistogramSequence":
        return HistogramSequence(
            self.data[:, :, :, ::-1].copy(), self.frame_duration_us, self.t0_us, self.polarity_mode
        )


@dataclass
class FlowMap:
    """Dense optical flow (u right, v down, in pixels per ground-truth interval)."""

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if not (self.u.shape == self.v.shape == self.valid.shape):
            raise ValueError(
                f"flow planes disagree: u {self.u.shape}, v {self.v.shape}, valid {self.valid.shape}"
            )

    @property
    def sensor_dims(self):
        return self.u.shape

    def as_array(self) -> np.ndarray:
        """Stack to (2, H, W): channel 0 = u, channel 1 = v."""
        return np.stack([self.u, self.v])

    def flip_horizontal(self) -> "FlowMap":
        """Mirror along x and negate the horizontal component."""
        return FlowMap(-self.u[:, ::-1].copy(), self.v[:, ::-1].copy(), self.valid[:, ::-1].copy())


def flip_events_horizontal(events: np.ndarray, sensor_width: int) -> np.ndarray:
    """Mirror event x coordinates: x -> W - 1 - x."""
    out = events.copy()
    out["x"] = sensor_width - 1 - out["x"]
    return out


def encode_histograms(
    events,
    t0_us: int,
    frame_duration_us: int,
    num_frames: int,
    sensor_dims,
    polarity_mode: str = SEPARATE,
) -> HistogramSequence:
    """Count events per polarity channel, frame, and pixel.

    Events outside [t0, t0 + num_frames * duration) are ignored; coordinates
    outside the sensor raise with the offending index.
    """
    if frame_duration_us <= 0:
        raise ValueError(f"frame_duration_us must be > 0, got {frame_duration_us}")
    if num_frames < 1:
        raise ValueError(f"num_frames must be >= 1, got {num_frames}")
    if polarity_mode not in (SEPARATE, COMBINED):
        raise ValueError(f"unknown polarity_mode {polarity_mode!r}")

    events = as_event_array(events)
    validate_events(events, sensor_dims)
    h, w = sensor_dims
    channels = 2 if polarity_mode == SEPARATE else 1
    data = np.zeros((channels, num_frames, h, w), dtype=np.int64)
    if events.size:
        t = events["t"].astype(np.int64)
        frame = (t - t0_us) // frame_duration_us
        keep = (t >= t0_us) & (frame < num_frames)
        if np.any(keep):
            frame = frame[keep]
            x = events["x"][keep].astype(np.int64)
            y = events["y"][keep].astype(np.int64)
            if polarity_mode == SEPARATE:
                chan = (events["p"][keep] < 0).astype(np.int64)
            else:
                chan = np.zeros(frame.shape, dtype=np.int64)
            np.add.at(data, (chan, frame, y, x), 1)
    return HistogramSequence(data, frame_duration_us, int(t0_us), polarity_mode)


def sliding_window(
    stream,
    window_frames: int = 21,
    frame_duration_us: int = 9000,
    stride_frames: int = 1,
    sensor_dims=(480, 640),
    polarity_mode: str = SEPARATE,
    t0_us=None,
) -> Iterator[HistogramSequence]:
    """Yield overlapping histogram windows over a timestamp-sorted stream.

    The frame grid starts at ``t0_us`` (default: timestamp of the first
    event); windows advance by ``stride_frames`` and stop once fewer than
    ``window_frames`` whole frames remain. A stream shorter than one window
    yields nothing.
    """
    if stride_frames < 1:
        raise ValueError(f"stride_frames must be >= 1, got {stride_frames}")
    stream = as_event_array(stream)
    if stream.size == 0:
        return
    if t0_us is None:
        t0_us = int(stream["t"][0])
    span = int(stream["t"][-1]) - t0_us
    total_frames = span // frame_duration_us + 1
    start = 0
    t = stream["t"].astype(np.int64)
    while start + window_frames <= total_frames:
        w_start = t0_us + start * frame_duration_us
        w_end = w_start + window_frames * frame_duration_us
        lo, hi = np.searchsorted(t, [w_start, w_end])
        yield encode_histograms(
            stream[lo:hi], w_start, frame_duration_us, window_frames, sensor_dims, polarity_mode
        )
        start += stride_frames
