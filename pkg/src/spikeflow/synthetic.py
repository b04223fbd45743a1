"""Synthetic event scenes with analytic ground-truth flow.

A scene is a static log-intensity pattern translating at constant velocity
over a toroidal sensor. Pixels integrate log-intensity change since their
last event; every time the accumulated change crosses +-contrast_threshold
the pixel emits an event with the sign of the change, mirroring how an event
camera pixel fires. Simulation runs on a fixed micro-step grid, emitting
floor(|delta| / threshold) events per pixel per step, which makes the stream
exactly reproducible by an independent intensity replay (see
:func:`replay_reference_levels`).

Ground truth: every pixel under the pattern support moves (vx, vy) px/s, so
flow is u = vx * gt_interval, v = vy * gt_interval on the support mask.
"""

from dataclasses import dataclass, field

import numpy as np

from .events import EVENT_DTYPE, FlowMap

PATTERN_KINDS = ("rectangle", "checkerboard", "dots")


@dataclass
class Pattern:
    """Texture spec: a named generator plus its parameters."""

    kind: str
    amplitude: float = 0.7
    cell: int = 8            # checkerboard cell edge
    size: tuple = (24, 24)   # rectangle (height, width)
    origin: tuple = (4, 4)   # rectangle top-left
    num_dots: int = 120
    seed: int = 0
    params: dict = field(default_factory=dict)


def render_pattern(pattern: Pattern, sensor_dims):
    """Rasterize to (log_intensity, support) arrays of shape (H, W)."""
    h, w = sensor_dims
    log_i = np.zeros((h, w), dtype=np.float64)
    if pattern.kind == "rectangle":
        ph, pw = pattern.size
        y0, x0 = pattern.origin
        log_i[y0 : y0 + ph, x0 : x0 + pw] = pattern.amplitude
        support = log_i > 0
    elif pattern.kind == "checkerboard":
        yy, xx = np.mgrid[0:h, 0:w]
        log_i = (((yy // pattern.cell) + (xx // pattern.cell)) % 2) * pattern.amplitude
        support = np.ones((h, w), dtype=bool)
    elif pattern.kind == "dots":
        rng = np.random.default_rng(pattern.seed)
        ys = rng.integers(0, h, pattern.num_dots)
        xs = rng.integers(0, w, pattern.num_dots)
        log_i[ys, xs] = pattern.amplitude
        support = log_i > 0
    else:
        raise ValueError(f"unknown pattern kind {pattern.kind!r}")
    if not support.any():
        raise ValueError("zero-area pattern")
    return log_i, support


def _torus_bilinear(img, shift_x, shift_y):
    """Sample img translated by (shift_x, shift_y) pixels, wrapping at edges."""
    h, w = img.shape
    ys = (np.arange(h)[:, None] - shift_y) % h
    xs = (np.arange(w)[None, :] - shift_x) % w
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = ys - y0
    fx = xs - x0
    y0 %= h
    x0 %= w
    y1 = (y0 + 1) % h
    x1 = (x0 + 1) % w
    return (
        img[y0, x0] * (1 - fy) * (1 - fx)
        + img[y0, x1] * (1 - fy) * fx
        + img[y1, x0] * fy * (1 - fx)
        + img[y1, x1] * fy * fx
    )


def _torus_nearest(mask, shift_x, shift_y):
    h, w = mask.shape
    ys = np.rint(np.arange(h) - shift_y).astype(np.int64) % h
    xs = np.rint(np.arange(w) - shift_x).astype(np.int64) % w
    return mask[np.ix_(ys, xs)]


def generate_synthetic_scene(
    pattern: Pattern,
    velocity,
    duration_us: int,
    sensor_dims,
    contrast_threshold: float = 0.25,
    gt_interval_s: float = 0.1,
    sim_dt_us: int = 1000,
):
    """Simulate a translating pattern; return (events, FlowMap).

    ``velocity`` is (vx, vy) in pixels/second. Events carry integer
    microsecond timestamps on the simulation grid. The returned flow is in
    pixels per ``gt_interval_s`` and is valid on the pattern support at the
    end of the scene.
    """
    if contrast_threshold <= 0:
        raise ValueError(f"contrast_threshold must be > 0, got {contrast_threshold}")
    vx, vy = float(velocity[0]), float(velocity[1])
    log_i, support = render_pattern(pattern, sensor_dims)
    h, w = sensor_dims

    steps = int(duration_us) // int(sim_dt_us)
    ref = log_i.copy()  # reference level = log intensity at each pixel's last event
    xs_grid, ys_grid = np.meshgrid(np.arange(w, dtype=np.uint16), np.arange(h, dtype=np.uint16))
    chunks = []
    for k in range(1, steps + 1):
        t_us = k * sim_dt_us
        shift_x = vx * t_us * 1e-6
        shift_y = vy * t_us * 1e-6
        lum = _torus_bilinear(log_i, shift_x, shift_y)
        delta = lum - ref
        fired = np.floor(np.abs(delta) / contrast_threshold).astype(np.int64)
        fired_pos = np.where(delta > 0, fired, 0)
        fired_neg = np.where(delta < 0, fired, 0)
        ref += contrast_threshold * (fired_pos - fired_neg)
        for counts, pol in ((fired_pos, 1), (fired_neg, -1)):
            ys, xs = np.nonzero(counts)
            if ys.size == 0:
                continue
            rep = counts[ys, xs]
            chunk = np.zeros(int(rep.sum()), dtype=EVENT_DTYPE)
            chunk["x"] = np.repeat(xs_grid[ys, xs], rep)
            chunk["y"] = np.repeat(ys_grid[ys, xs], rep)
            chunk["t"] = t_us
            chunk["p"] = pol
            chunks.append(chunk)

    events = np.concatenate(chunks) if chunks else np.zeros(0, dtype=EVENT_DTYPE)
    order = np.argsort(events["t"], kind="stable")
    events = events[order]

    shift_x = vx * steps * sim_dt_us * 1e-6
    shift_y = vy * steps * sim_dt_us * 1e-6
    valid = _torus_nearest(support, shift_x, shift_y)
    u = np.where(valid, vx * gt_interval_s, 0.0)
    v = np.where(valid, vy * gt_interval_s, 0.0)
    return events, FlowMap(u, v, valid)


def replay_reference_levels(
    events,
    pattern: Pattern,
    velocity,
    duration_us: int,
    sensor_dims,
    contrast_threshold: float,
    sim_dt_us: int = 1000,
):
    """Independent integrator check of a generated stream.

    Replays the intensity signal and, at every step, recomputes how many
    threshold crossings each pixel must have accumulated since its last
    event; the observed event counts must match exactly (no spurious events,
    no missed crossings). The reference level then advances by
    +-threshold per observed event. Returns True when the stream is exactly
    consistent.
    """
    vx, vy = float(velocity[0]), float(velocity[1])
    log_i, _ = render_pattern(pattern, sensor_dims)
    ref = log_i.copy()
    steps = int(duration_us) // int(sim_dt_us)
    t = np.asarray(events["t"], dtype=np.int64)
    # Events must sit on the simulation grid to be attributable at all.
    if events.size and np.any((t % sim_dt_us != 0) | (t > steps * sim_dt_us) | (t <= 0)):
        return False
    for k in range(1, steps + 1):
        t_us = k * sim_dt_us
        lum = _torus_bilinear(log_i, vx * t_us * 1e-6, vy * t_us * 1e-6)
        delta = lum - ref
        expect_pos = np.where(delta > 0, np.floor(delta / contrast_threshold), 0.0).astype(np.int64)
        expect_neg = np.where(delta < 0, np.floor(-delta / contrast_threshold), 0.0).astype(np.int64)
        seen_pos = np.zeros_like(expect_pos)
        seen_neg = np.zeros_like(expect_neg)
        sel = t == t_us
        if np.any(sel):
            ys = events["y"][sel].astype(np.int64)
            xs = events["x"][sel].astype(np.int64)
            pol = events["p"][sel]
            np.add.at(seen_pos, (ys[pol == 1], xs[pol == 1]), 1)
            np.add.at(seen_neg, (ys[pol == -1], xs[pol == -1]), 1)
        if np.any(seen_pos != expect_pos) or np.any(seen_neg != expect_neg):
            return False
        ref += contrast_threshold * (seen_pos - seen_neg)
    return True


def make_flow_windows(
    num_scenes: int,
    velocity,
    sensor_dims=(64, 64),
    window_frames: int = 21,
    frame_duration_us: int = 9000,
    stride_frames: int = 2,
    windows_per_scene: int = 40,
    contrast_threshold: float = 0.25,
    gt_interval_s: float = 0.1,
    seed: int = 0,
    pattern_kinds=("checkerboard", "dots"),
):
    """Generate (HistogramSequence, FlowMap, scene_name) triples for training.

    Scenes cycle through ``pattern_kinds`` with per-scene texture seeds; each
    contributes up to ``windows_per_scene`` sliding windows.
    """
    from .events import sliding_window

    triples = []
    for s in range(num_scenes):
        kind = pattern_kinds[s % len(pattern_kinds)]
        pattern = Pattern(kind, seed=seed * 1000 + s, cell=6 + 2 * (s % 3))
        duration_us = (window_frames + stride_frames * (windows_per_scene - 1) + 1) * frame_duration_us
        events, flow = generate_synthetic_scene(
            pattern,
            velocity,
            duration_us,
            sensor_dims,
            contrast_threshold=contrast_threshold,
            gt_interval_s=gt_interval_s,
        )
        count = 0
        for hist in sliding_window(
            events,
            window_frames=window_frames,
            frame_duration_us=frame_duration_us,
            stride_frames=stride_frames,
            sensor_dims=sensor_dims,
            t0_us=0,
        ):
            triples.append((hist, flow, f"scene{s:03d}"))
            count += 1
            if count >= windows_per_scene:
                break
    return triples
