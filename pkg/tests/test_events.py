"""Histogram encoding and sliding windows."""

import numpy as np
import pytest

from spikeflow.events import (
    COMBINED,
    EVENT_DTYPE,
    Event,
    FlowMap,
    as_event_array,
    encode_histograms,
    flip_events_horizontal,
    sliding_window,
)


def make_events(rows):
    return as_event_array([Event(*r) for r in rows])


def random_stream(rng, n, dims=(8, 10), t_max=50_000):
    h, w = dims
    arr = np.zeros(n, dtype=EVENT_DTYPE)
    arr["x"] = rng.integers(0, w, n)
    arr["y"] = rng.integers(0, h, n)
    arr["t"] = np.sort(rng.integers(0, t_max, n))
    arr["p"] = rng.choice([-1, 1], n)
    return arr


class TestEncode:
    def test_empty_stream_all_zero(self):
        hist = encode_histograms([], 0, 1000, 4, (4, 4))
        assert hist.data.shape == (2, 4, 4, 4)
        assert hist.data.sum() == 0

    def test_three_events_same_pixel(self):
        events = make_events([(2, 1, 10, 1), (2, 1, 20, 1), (2, 1, 30, 1)])
        hist = encode_histograms(events, 0, 1000, 1, (4, 4))
        assert hist.data[0, 0, 1, 2] == 3
        assert hist.data.sum() == 3

    def test_combined_mode_sums_polarities(self):
        events = make_events([(0, 0, 5, 1), (0, 0, 6, -1)])
        hist = encode_histograms(events, 0, 1000, 1, (2, 2), COMBINED)
        assert hist.data.shape[0] == 1
        assert hist.data[0, 0, 0, 0] == 2

    def test_polarity_channels(self):
        events = make_events([(1, 0, 5, 1), (1, 0, 6, -1), (1, 0, 7, -1)])
        hist = encode_histograms(events, 0, 1000, 1, (2, 2))
        assert hist.data[0, 0, 0, 1] == 1  # positive channel
        assert hist.data[1, 0, 0, 1] == 2  # negative channel

    def test_boundary_event_belongs_to_later_frame(self):
        events = make_events([(0, 0, 1000, 1)])
        hist = encode_histograms(events, 0, 1000, 2, (1, 1))
        assert hist.data[0, 0, 0, 0] == 0
        assert hist.data[0, 1, 0, 0] == 1

    def test_out_of_window_ignored(self):
        events = make_events([(0, 0, 100, 1), (0, 0, 5000, 1)])
        hist = encode_histograms(events, 0, 1000, 2, (1, 1))
        assert hist.data.sum() == 1

    def test_out_of_bounds_rejected_with_index(self):
        events = make_events([(0, 0, 1, 1), (5, 0, 2, 1)])
        with pytest.raises(ValueError, match="event 1"):
            encode_histograms(events, 0, 1000, 1, (4, 4))

    def test_bad_polarity_rejected(self):
        arr = np.zeros(1, dtype=EVENT_DTYPE)
        arr["p"] = 0
        with pytest.raises(ValueError, match="polarity"):
            encode_histograms(arr, 0, 1000, 1, (4, 4))

    def test_count_conservation_random(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(0, 200))
            events = random_stream(rng, n)
            frames = int(rng.integers(1, 8))
            dur = int(rng.integers(500, 20_000))
            t0 = int(rng.integers(0, 10_000))
            hist = encode_histograms(events, t0, dur, frames, (8, 10))
            t = events["t"].astype(np.int64)
            in_window = int(((t >= t0) & (t < t0 + frames * dur)).sum())
            assert hist.data.sum() == in_window

    def test_combined_equals_channel_sum_of_separate(self):
        rng = np.random.default_rng(1)
        events = random_stream(rng, 300)
        sep = encode_histograms(events, 0, 5000, 5, (8, 10))
        com = encode_histograms(events, 0, 5000, 5, (8, 10), COMBINED)
        np.testing.assert_array_equal(com.data[0], sep.data.sum(axis=0))

    def test_flip_commutes_with_encoding(self):
        rng = np.random.default_rng(2)
        events = random_stream(rng, 250)
        flipped = flip_events_horizontal(events, 10)
        a = encode_histograms(flipped, 0, 5000, 5, (8, 10)).data
        b = encode_histograms(events, 0, 5000, 5, (8, 10)).data[:, :, :, ::-1]
        np.testing.assert_array_equal(a, b)


class TestSlidingWindow:
    def stream_of_frames(self, num_frames, dur=1000):
        # one event per frame so the span covers exactly num_frames frames
        rows = [(0, 0, k * dur + dur // 2, 1) for k in range(num_frames)]
        return make_events(rows)

    def test_42_frames_window21_stride21(self):
        wins = list(sliding_window(self.stream_of_frames(42), 21, 1000, 21, (2, 2), t0_us=0))
        assert len(wins) == 2

    def test_21_frames_single_window(self):
        wins = list(sliding_window(self.stream_of_frames(21), 21, 1000, 1, (2, 2), t0_us=0))
        assert len(wins) == 1

    def test_25_frames_window21_stride2(self):
        wins = list(sliding_window(self.stream_of_frames(25), 21, 1000, 2, (2, 2), t0_us=0))
        assert len(wins) == 3
        assert [w.t0_us for w in wins] == [0, 2000, 4000]

    def test_short_stream_yields_nothing(self):
        wins = list(sliding_window(self.stream_of_frames(5), 21, 1000, 1, (2, 2), t0_us=0))
        assert wins == []

    def test_each_window_counts_only_its_events(self):
        wins = list(sliding_window(self.stream_of_frames(25), 21, 1000, 2, (2, 2), t0_us=0))
        for w in wins:
            assert w.data.sum() == 21
            assert w.num_frames == 21

    def test_stride_must_be_positive(self):
        with pytest.raises(ValueError, match="stride"):
            list(sliding_window(self.stream_of_frames(25), 21, 1000, 0, (2, 2)))


class TestFlowMap:
    def test_flip_negates_u_and_mirrors(self):
        u = np.array([[3.0, 1.0]])
        v = np.array([[1.0, 2.0]])
        valid = np.array([[True, False]])
        f = FlowMap(u, v, valid).flip_horizontal()
        np.testing.assert_array_equal(f.u, [[-1.0, -3.0]])
        np.testing.assert_array_equal(f.v, [[2.0, 1.0]])
        np.testing.assert_array_equal(f.valid, [[False, True]])

    def test_double_flip_identity(self):
        rng = np.random.default_rng(3)
        f = FlowMap(rng.standard_normal((4, 6)), rng.standard_normal((4, 6)), rng.random((4, 6)) < 0.5)
        g = f.flip_horizontal().flip_horizontal()
        np.testing.assert_array_equal(g.u, f.u)
        np.testing.assert_array_equal(g.v, f.v)
        np.testing.assert_array_equal(g.valid, f.valid)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="disagree"):
            FlowMap(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2), dtype=bool))
