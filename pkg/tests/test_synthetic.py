"""Synthetic scene generator and its intensity-replay oracle."""

import numpy as np
import pytest

from spikeflow.synthetic import (
    Pattern,
    generate_synthetic_scene,
    make_flow_windows,
    render_pattern,
    replay_reference_levels,
)


class TestGenerator:
    def test_zero_velocity_no_events(self):
        ev, flow = generate_synthetic_scene(Pattern("checkerboard"), (0.0, 0.0), 300_000, (32, 32))
        assert ev.size == 0
        assert np.all(flow.u == 0) and np.all(flow.v == 0)

    def test_ground_truth_scaling(self):
        _, flow = generate_synthetic_scene(
            Pattern("checkerboard"), (100.0, 0.0), 100_000, (32, 32), gt_interval_s=0.1
        )
        assert np.all(flow.u[flow.valid] == 10.0)
        assert np.all(flow.v[flow.valid] == 0.0)

    def test_dot_leading_edge_positive(self):
        pat = Pattern("rectangle", size=(1, 1), origin=(8, 4), amplitude=1.0)
        ev, _ = generate_synthetic_scene(pat, (100.0, 0.0), 100_000, (16, 16), contrast_threshold=0.3)
        pos = ev[ev["p"] == 1]
        neg = ev[ev["p"] == -1]
        assert pos.size > 0 and neg.size > 0
        assert pos["x"].astype(float).mean() > neg["x"].astype(float).mean()
        assert set(np.unique(ev["y"])) == {8}  # horizontal motion stays on the dot row

    def test_zero_area_pattern_rejected(self):
        with pytest.raises(ValueError, match="zero-area"):
            render_pattern(Pattern("rectangle", size=(0, 0)), (16, 16))

    def test_bad_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown pattern"):
            render_pattern(Pattern("stripes"), (16, 16))

    def test_nonpositive_threshold_rejected(self):
        with pytest.raises(ValueError, match="contrast_threshold"):
            generate_synthetic_scene(Pattern("checkerboard"), (10.0, 0.0), 1000, (16, 16), 0.0)

    def test_timestamps_sorted_integer_microseconds(self):
        ev, _ = generate_synthetic_scene(Pattern("checkerboard", cell=4), (80.0, 30.0), 200_000, (32, 32))
        t = ev["t"].astype(np.int64)
        assert np.all(np.diff(t) >= 0)
        assert t.min() > 0

    def test_deterministic(self):
        args = (Pattern("dots", num_dots=40, seed=5), (60.0, -40.0), 150_000, (24, 24))
        a, fa = generate_synthetic_scene(*args)
        b, fb = generate_synthetic_scene(*args)
        assert np.array_equal(a, b)
        np.testing.assert_array_equal(fa.u, fb.u)


class TestReplayOracle:
    @pytest.mark.parametrize("kind", ["rectangle", "checkerboard", "dots"])
    @pytest.mark.parametrize("velocity", [(100.0, 0.0), (-50.0, 80.0)])
    def test_streams_exactly_consistent(self, kind, velocity):
        pat = Pattern(kind, seed=7, size=(6, 6), num_dots=25)
        ev, _ = generate_synthetic_scene(pat, velocity, 250_000, (24, 24), contrast_threshold=0.2)
        assert ev.size > 0
        assert replay_reference_levels(ev, pat, velocity, 250_000, (24, 24), 0.2)

    def test_tampered_stream_detected(self):
        pat = Pattern("checkerboard", cell=6)
        ev, _ = generate_synthetic_scene(pat, (100.0, 0.0), 200_000, (24, 24), contrast_threshold=0.2)
        bad = ev.copy()
        bad["p"][0] = -bad["p"][0]
        assert not replay_reference_levels(bad, pat, (100.0, 0.0), 200_000, (24, 24), 0.2)

    def test_dropped_event_detected(self):
        pat = Pattern("checkerboard", cell=6)
        ev, _ = generate_synthetic_scene(pat, (100.0, 0.0), 200_000, (24, 24), contrast_threshold=0.2)
        assert not replay_reference_levels(ev[1:], pat, (100.0, 0.0), 200_000, (24, 24), 0.2)


class TestDatasetBuilder:
    def test_window_counts_and_alignment(self):
        triples = make_flow_windows(
            num_scenes=2, velocity=(100.0, 0.0), sensor_dims=(32, 32),
            window_frames=13, stride_frames=2, windows_per_scene=5, seed=3,
        )
        assert len(triples) == 10
        names = {name for _, _, name in triples}
        assert names == {"scene000", "scene001"}
        for hist, flow, _ in triples:
            assert hist.data.shape == (2, 13, 32, 32)
            assert flow.u.shape == (32, 32)
            assert np.all(flow.u[flow.valid] == 10.0)
