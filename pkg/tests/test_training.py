"""Training loop: augmentation, schedule, determinism, checkpoint resume."""

import numpy as np
import pytest

from spikeflow.autodiff import Tensor
from spikeflow.events import FlowMap, HistogramSequence
from spikeflow.losses import MaskedFlowPair, loss_combined
from spikeflow.model import ModelConfig, build_model
from spikeflow.synthetic import make_flow_windows
from spikeflow.training import (
    Sample,
    TrainConfig,
    Trainer,
    augment_flip,
    checkpoint_load,
    checkpoint_save,
    evaluate,
    fit,
)


def small_cfg(**kw):
    base = dict(
        sensor_dims=(16, 16), stem_channels=4, num_encoders=2,
        spatial_kernel=3, temporal_kernel=3, num_frames=7, dtype="float32",
    )
    base.update(kw)
    return ModelConfig(**base)


def toy_dataset(n=6, dims=(16, 16), frames=7, seed=0, u=4.0, v=1.0):
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        data = rng.poisson(0.8, (2, frames) + dims).astype(np.int64)
        hist = HistogramSequence(data, 9000, 0)
        flow = FlowMap(np.full(dims, u), np.full(dims, v), np.ones(dims, dtype=bool))
        samples.append(Sample(hist, flow, sequence=f"seq{i % 2}"))
    return samples


def weights_blob(model):
    return b"".join(model.params[k].data.tobytes() for k in sorted(model.params))


class TestAugmentFlip:
    def always(self):
        return np.random.default_rng(0)  # first random() draw is < 1.0

    def test_flip_reflects_and_negates_u(self):
        s = toy_dataset(1)[0]
        s.flow.u[:, :] = 3.0
        s.flow.v[:, :] = 1.0
        flipped = augment_flip(s, self.always(), flip_probability=1.1)
        assert np.all(flipped.flow.u == -3.0)
        assert np.all(flipped.flow.v == 1.0)
        np.testing.assert_array_equal(flipped.hist.data, s.hist.data[:, :, :, ::-1])

    def test_double_flip_identity(self):
        s = toy_dataset(1, seed=3)[0]
        twice = augment_flip(
            augment_flip(s, self.always(), 1.1), self.always(), 1.1
        )
        np.testing.assert_array_equal(twice.hist.data, s.hist.data)
        np.testing.assert_array_equal(twice.flow.u, s.flow.u)

    def test_mass_conserved(self):
        s = toy_dataset(1, seed=4)[0]
        flipped = augment_flip(s, self.always(), 1.1)
        assert flipped.hist.data.sum() == s.hist.data.sum()

    def test_probability_zero_identity(self):
        s = toy_dataset(1, seed=5)[0]
        out = augment_flip(s, self.always(), flip_probability=0.0)
        assert out is s

    def test_flip_contract_on_loss(self):
        # data-level contract: loss(pred, gt) == loss(flip(pred), flip(gt))
        rng = np.random.default_rng(6)
        pred = rng.standard_normal((2, 4, 4))
        gt_map = FlowMap(rng.standard_normal((4, 4)), rng.standard_normal((4, 4)), np.ones((4, 4), bool))
        flipped_gt = gt_map.flip_horizontal()
        flipped_pred = np.stack([-pred[0, :, ::-1], pred[1, :, ::-1]])
        a = loss_combined(MaskedFlowPair(Tensor(pred), gt_map.as_array(), gt_map.valid)).item()
        b = loss_combined(
            MaskedFlowPair(Tensor(flipped_pred), flipped_gt.as_array(), flipped_gt.valid)
        ).item()
        assert a == pytest.approx(b, rel=1e-6)


class TestSchedule:
    def test_exponential_decay(self):
        model = build_model(small_cfg(), seed=0)
        tr = Trainer(model, TrainConfig(epochs=5, base_lr=0.01, lr_gamma=0.5, seed=0))
        data = toy_dataset(2)
        lrs = []
        for _ in range(3):
            lrs.append(tr.lr)
            tr.train_epoch(data)
        assert lrs == [0.01, 0.005, 0.0025]

    def test_gamma_range_validated(self):
        with pytest.raises(ValueError, match="lr_gamma"):
            TrainConfig(lr_gamma=0.0)

    def test_batch_size_override_warns(self):
        with pytest.warns(UserWarning, match="batch_size"):
            TrainConfig(batch_size=4)


class TestTrainEpoch:
    def test_two_runs_bit_identical(self):
        data = toy_dataset(5, seed=1)

        def run():
            model = build_model(small_cfg(), seed=7)
            tr = Trainer(model, TrainConfig(epochs=2, seed=3))
            for _ in range(2):
                tr.train_epoch(data)
            return weights_blob(model)

        assert run() == run()

    def test_empty_mask_samples_skipped_with_counter(self):
        data = toy_dataset(3, seed=2)
        data[1].flow.valid[:, :] = False
        model = build_model(small_cfg(), seed=0)
        tr = Trainer(model, TrainConfig(seed=0, flip_probability=0.0))
        report = tr.train_epoch(data)
        assert report.skipped == 1

    def test_empty_dataset_rejected(self):
        model = build_model(small_cfg(), seed=0)
        tr = Trainer(model, TrainConfig(seed=0))
        with pytest.raises(ValueError, match="empty dataset"):
            tr.train_epoch([])

    def test_gradient_reaches_every_layer_in_soft_mode(self):
        model = build_model(small_cfg(activation="soft", dtype="float64"), seed=1)
        sample = toy_dataset(1, seed=7)[0]
        from spikeflow.losses import trace_loss

        trace = model.forward(sample.hist.data.astype(np.float64))
        trace_loss(trace, sample.flow.as_array(), sample.flow.valid).backward()
        layers = {name.split(".")[0] for name in model.params}
        for layer in layers:
            grads = [
                np.abs(p.grad).max()
                for name, p in model.params.items()
                if name.startswith(layer) and p.grad is not None
            ]
            assert grads and max(grads) > 0, f"dead layer {layer}"

    def test_loss_decreases_on_constant_flow(self):
        # vertical flow: the horizontal-flip augmentation leaves v untouched
        data = toy_dataset(8, seed=8, u=0.0, v=4.0)
        model = build_model(small_cfg(), seed=2)
        tr = Trainer(model, TrainConfig(epochs=10, base_lr=3e-3, seed=0))
        first = tr.train_epoch(data)
        last = None
        for _ in range(9):
            last = tr.train_epoch(data)
        assert last.aee < first.aee


class TestEvaluate:
    def test_untrained_model_aee_is_mean_gt_norm(self):
        data = toy_dataset(4, seed=9, u=3.0, v=4.0)
        model = build_model(small_cfg(), seed=0)
        report = evaluate(model, data)
        assert report.aee == pytest.approx(5.0, rel=1e-6)

    def test_side_effect_free(self):
        data = toy_dataset(3, seed=10)
        model = build_model(small_cfg(), seed=1)
        before = weights_blob(model)
        evaluate(model, data)
        assert weights_blob(model) == before

    def test_masked_pixels_ignored(self):
        data = toy_dataset(2, seed=11)
        for s in data:
            s.flow.valid[: 8] = False
        base = evaluate(build_model(small_cfg(), seed=2), data)
        for s in data:
            s.flow.u[~s.flow.valid] = 1e9
        corrupted = evaluate(build_model(small_cfg(), seed=2), data)
        assert base.aee == corrupted.aee

    def test_per_sequence_breakdown(self):
        data = toy_dataset(4, seed=12)
        report = evaluate(build_model(small_cfg(), seed=0), data)
        assert set(report.per_sequence) == {"seq0", "seq1"}
        assert report.num_samples == 4


class TestCheckpointing:
    def test_save_load_parameter_equality(self, tmp_path):
        model = build_model(small_cfg(), seed=5)
        tr = Trainer(model, TrainConfig(seed=1))
        tr.train_epoch(toy_dataset(3, seed=13))
        path = tmp_path / "m.ckpt"
        checkpoint_save(model, tr.optimizer.state_dict(), path, trainer=tr)
        loaded, bundle = checkpoint_load(path)
        assert weights_blob(loaded) == weights_blob(model)
        assert bundle.epoch == 1

    def test_mismatched_config_rejected(self, tmp_path):
        model = build_model(small_cfg(), seed=0)
        tr = Trainer(model, TrainConfig(seed=0))
        path = tmp_path / "m.ckpt"
        checkpoint_save(model, tr.optimizer.state_dict(), path, trainer=tr)
        with pytest.raises(ValueError, match="does not match"):
            checkpoint_load(path, expected_config=small_cfg(stem_channels=8))

    def test_resume_reproduces_uninterrupted_run(self, tmp_path):
        data = toy_dataset(5, seed=14)

        def straight():
            model = build_model(small_cfg(), seed=3)
            tr = Trainer(model, TrainConfig(epochs=4, seed=5))
            for _ in range(4):
                tr.train_epoch(data)
            return weights_blob(model)

        def interrupted():
            model = build_model(small_cfg(), seed=3)
            tr = Trainer(model, TrainConfig(epochs=4, seed=5))
            tr.train_epoch(data)
            tr.train_epoch(data)
            path = tmp_path / "mid.ckpt"
            tr.save_checkpoint(path)
            tr2 = Trainer.resume(path)
            assert tr2.epoch == 2
            tr2.train_epoch(data)
            tr2.train_epoch(data)
            return weights_blob(tr2.model)

        assert straight() == interrupted()


class TestFit:
    def test_fit_writes_reports_and_curves(self, tmp_path):
        data = toy_dataset(4, seed=15)
        model = build_model(small_cfg(), seed=0)
        cfg = TrainConfig(epochs=2, seed=0, eval_every=1, checkpoint_every=1)
        trainer, reports, val_reports = fit(
            model, data, cfg, val_data=toy_dataset(2, seed=16), out_dir=str(tmp_path)
        )
        assert len(reports) == 2
        assert (tmp_path / "report.txt").exists()
        assert (tmp_path / "training_curves.png").exists()
        assert (tmp_path / "validation.txt").exists()
        assert (tmp_path / "ckpt_final.ckpt").exists()
        assert (tmp_path / "ckpt_epoch0001.ckpt").exists()
        lines = (tmp_path / "report.txt").read_text().strip().splitlines()
        assert lines[0].startswith("epoch=0 loss_mod=")
        assert len(val_reports) == 2

    def test_synthetic_windows_reduce_aee(self):
        triples = make_flow_windows(
            num_scenes=2, velocity=(0.0, 100.0), sensor_dims=(16, 16),
            window_frames=7, stride_frames=2, windows_per_scene=6, seed=21,
        )
        # regenerate with matching temporal kernel: frames=7 fits kt=3, 2 encoders
        data = [Sample(h, f, s) for h, f, s in triples]
        model = build_model(small_cfg(), seed=4)
        baseline = evaluate(model, data).aee
        tr = Trainer(model, TrainConfig(epochs=8, base_lr=5e-3, seed=0))
        for _ in range(8):
            tr.train_epoch(data)
        assert evaluate(model, data).aee < baseline
