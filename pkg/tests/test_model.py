"""Network assembly: parameter ledger, temporal collapse, trace structure."""

import numpy as np
import pytest

from spikeflow.autodiff import no_grad
from spikeflow.model import ModelConfig, build_model, count_parameters

# Frozen regression values for the four architecture variants (1/2 residuals
# x sum/concat skips). The default lands within 1.7% of the 1.22M anchor.
EXPECTED_DEFAULT_PARAMS = 1_199_346
EXPECTED_SUM_1RES = 1_088_786
EXPECTED_SUM_2RES = 1_663_250
EXPECTED_CAT_2RES = 1_773_810


def small_cfg(**kw):
    base = dict(
        sensor_dims=(16, 16), stem_channels=4, num_encoders=2,
        spatial_kernel=3, temporal_kernel=3, num_frames=7,
    )
    base.update(kw)
    return ModelConfig(**base)


class TestParameterCounts:
    def test_default_frozen_value(self):
        model = build_model(ModelConfig(sensor_dims=(64, 64)))
        assert count_parameters(model) == EXPECTED_DEFAULT_PARAMS

    def test_variant_table(self):
        variants = {
            ("sum", 1): EXPECTED_SUM_1RES,
            ("sum", 2): EXPECTED_SUM_2RES,
            ("concat", 2): EXPECTED_CAT_2RES,
        }
        for (skip, res), expected in variants.items():
            cfg = ModelConfig(sensor_dims=(64, 64), skip_mode=skip, num_residuals=res)
            assert count_parameters(build_model(cfg)) == expected

    def test_concat_exceeds_sum_at_equal_residuals(self):
        assert EXPECTED_DEFAULT_PARAMS > EXPECTED_SUM_1RES
        assert EXPECTED_CAT_2RES > EXPECTED_SUM_2RES

    def test_pointwise_toy_count(self):
        cfg = small_cfg(head_bias=False)
        model = build_model(cfg)
        # single pointwise conv Cin=2, Cout=3, no bias would be 6 scalars
        assert model.params["stem.pw"].size == cfg.stem_channels * cfg.input_channels

    def test_same_seed_bit_identical_weights(self):
        a = build_model(small_cfg(), seed=42)
        b = build_model(small_cfg(), seed=42)
        for k in a.params:
            assert a.params[k].data.tobytes() == b.params[k].data.tobytes()

    def test_different_seed_differs(self):
        a = build_model(small_cfg(), seed=1)
        b = build_model(small_cfg(), seed=2)
        assert any(a.params[k].data.tobytes() != b.params[k].data.tobytes() for k in a.params)


class TestConfigValidation:
    def test_temporal_collapse_invariant_enforced(self):
        with pytest.raises(ValueError, match="temporal collapse"):
            ModelConfig(sensor_dims=(64, 64), num_frames=20).validate()

    def test_dims_divisibility(self):
        with pytest.raises(ValueError, match="divisible"):
            ModelConfig(sensor_dims=(60, 64)).validate()

    def test_2d_mode_skips_collapse_invariant(self):
        ModelConfig(sensor_dims=(64, 64), num_frames=20, encoding="2d").validate()

    def test_roundtrip_dict(self):
        cfg = small_cfg(skip_mode="sum", encoding="2d")
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestForward:
    def test_shape_contract_and_collapse_chain(self):
        cfg = ModelConfig(sensor_dims=(64, 64))
        model = build_model(cfg, seed=0)
        x = np.random.default_rng(0).poisson(0.5, (2, 21, 64, 64)).astype(np.float32)
        with no_grad():
            trace = model.forward(x, collect_spikes=True)
        assert len(trace.snapshots) == 4
        assert all(s.shape == (2, 64, 64) for s in trace.snapshots)
        assert trace.spikes["stem"].shape[1] == 17
        assert [trace.spikes[f"enc{i}"].shape[1] for i in (1, 2, 3, 4)] == [13, 9, 5, 1]

    def test_monotone_accumulation(self):
        # snapshot_k - snapshot_{k-1} must equal head_k's contribution exactly
        model = build_model(small_cfg(), seed=1)
        x = np.random.default_rng(1).poisson(2.0, (2, 7, 16, 16)).astype(np.float32)
        with no_grad():
            trace = model.forward(x, collect_spikes=True)
            heads = [
                model.heads[i](trace.spikes[f"dec{i + 1}"]).data
                for i in range(len(model.heads))
            ]
        np.testing.assert_array_equal(trace.snapshots[0].data, heads[0])
        for k in range(1, len(trace.snapshots)):
            delta = trace.snapshots[k].data - trace.snapshots[k - 1].data
            np.testing.assert_array_equal(delta, heads[k])

    def test_zero_input_zero_prediction(self):
        model = build_model(small_cfg(), seed=2)
        with no_grad():
            trace = model.forward(np.zeros((2, 7, 16, 16), dtype=np.float32))
        assert np.all(trace.prediction.data == 0)

    def test_input_shape_checked(self):
        model = build_model(small_cfg(), seed=0)
        with pytest.raises(ValueError, match="input shape"):
            model.forward(np.zeros((2, 6, 16, 16), dtype=np.float32))

    def test_counts_above_one_accepted(self):
        model = build_model(small_cfg(), seed=0)
        x = np.full((2, 7, 16, 16), 7.0, dtype=np.float32)
        with no_grad():
            trace = model.forward(x)
        assert np.all(np.isfinite(trace.prediction.data))

    def test_2d_mode_same_trace_shape(self):
        cfg = small_cfg(encoding="2d")
        model = build_model(cfg, seed=3)
        x = np.random.default_rng(2).poisson(1.0, (2, 7, 16, 16)).astype(np.float32)
        with no_grad():
            trace = model.forward(x)
        assert len(trace.snapshots) == 2
        assert trace.prediction.shape == (2, 16, 16)

    def test_strided_and_combined_polarity_variants(self):
        for kw in (dict(downsample="strided"), dict(input_channels=1)):
            cfg = small_cfg(**kw)
            model = build_model(cfg, seed=4)
            c = cfg.input_channels
            x = np.random.default_rng(3).poisson(1.0, (c, 7, 16, 16)).astype(np.float32)
            with no_grad():
                trace = model.forward(x)
            assert trace.prediction.shape == (2, 16, 16)

    def test_bottleneck_concat_ablation(self):
        cfg = small_cfg(bottleneck_skip="concat")
        model = build_model(cfg, seed=5)
        x = np.random.default_rng(4).poisson(1.0, (2, 7, 16, 16)).astype(np.float32)
        with no_grad():
            trace = model.forward(x)
        assert trace.prediction.shape == (2, 16, 16)
        # first decoder conv consumes the doubled bottleneck width
        assert model.params["dec1.dw"].shape[0] == 2 * 16 + 8

    def test_resolution_preserved_across_configs(self):
        for skip in ("concat", "sum"):
            cfg = small_cfg(skip_mode=skip)
            model = build_model(cfg, seed=6)
            x = np.random.default_rng(5).poisson(1.0, (2, 7, 16, 16)).astype(np.float32)
            with no_grad():
                out = model.forward(x).prediction
            assert out.shape[1:] == tuple(cfg.sensor_dims)

    def test_forward_deterministic(self):
        model = build_model(small_cfg(), seed=7)
        x = np.random.default_rng(6).poisson(1.5, (2, 7, 16, 16)).astype(np.float32)
        with no_grad():
            a = model.forward(x).prediction.data.tobytes()
            b = model.forward(x).prediction.data.tobytes()
        assert a == b


class TestStateArrays:
    def test_roundtrip(self):
        model = build_model(small_cfg(), seed=8)
        state = model.state_arrays()
        other = build_model(small_cfg(), seed=9)
        other.load_state_arrays(state)
        for k in state:
            assert other.params[k].data.tobytes() == state[k].tobytes()

    def test_mismatch_rejected(self):
        model = build_model(small_cfg(), seed=0)
        state = model.state_arrays()
        del state["stem.dw"]
        with pytest.raises(ValueError, match="missing"):
            model.load_state_arrays(state)
