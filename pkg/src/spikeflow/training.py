"""Supervised surrogate-gradient training loop.

One sample = one histogram window + the flow map aligned to its final frame;
statelessness lets samples shuffle freely. Batch size is 1 (overridable, but
flagged: per-sample steps are what the schedule and defaults assume). The
learning rate decays exponentially per epoch, horizontal flips augment with
probability 0.5, and (seed, data, config) fully determine the final weights.
"""

import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from . import io as storage
from .autodiff import Tensor, no_grad
from .events import FlowMap, HistogramSequence
from .losses import MaskedFlowPair, loss_ang, loss_mod, metric_aae, metric_aee, trace_loss
from .model import FlowNet, ModelConfig, build_model


class NumericalError(RuntimeError):
    """Loss went non-finite; training aborts rather than corrupting the run."""


@dataclass
class TrainConfig:
    epochs: int = 30
    base_lr: float = 1e-3
    lr_gamma: float = 0.95               # exponential decay per epoch
    optimizer: str = "adaptive_moments"  # or "sgd_momentum"
    batch_size: int = 1
    flip_probability: float = 0.5
    seed: int = 0
    eval_every: int = 0                  # 0 = no validation passes
    loss_variant: str = "combined"       # "combined" | "mod" | "ang" | "relative"
    lambda_mod: float = 1.0
    lambda_ang: float = 1.0
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 0

    def __post_init__(self):
        if not (0.0 < self.lr_gamma <= 1.0):
            raise ValueError(f"lr_gamma must be in (0, 1], got {self.lr_gamma}")
        if self.batch_size != 1:
            warnings.warn(
                f"batch_size={self.batch_size} overrides the batch-1 default the "
                "defaults were tuned for; proceeding with per-sample steps anyway"
            )


@dataclass
class Sample:
    """One training example: a histogram window and its aligned ground truth."""

    hist: HistogramSequence
    flow: FlowMap
    sequence: str = ""


@dataclass
class EpochReport:
    epoch: int
    loss_mod: float
    loss_ang: float
    aee: float
    lr: float
    skipped: int = 0


@dataclass
class EvalReport:
    aee: float
    aae: float
    per_sequence: dict = field(default_factory=dict)
    num_samples: int = 0


def augment_flip(sample: Sample, rng, flip_probability: float = 0.5) -> Sample:
    """Mirror the window along x (and negate u) with the given probability."""
    if rng.random() >= flip_probability:
        return sample
    return Sample(sample.hist.flip_horizontal(), sample.flow.flip_horizontal(), sample.sequence)


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

class AdaptiveMoments:
    """Bias-corrected first/second-moment optimizer (Adam-style updates)."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            p.data -= (lr / c1) * self.m[k] / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_dict(self):
        return {
            "type": "adaptive_moments",
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state):
        self.t = int(state["t"])
        for k in self.params:
            self.m[k] = state["m"][k].copy()
            self.v[k] = state["v"][k].copy()


class SGDMomentum:
    def __init__(self, params, momentum=0.9):
        self.params = params
        self.momentum = momentum
        self.vel = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr):
        for k, p in self.params.items():
            if p.grad is None:
                continue
            self.vel[k] = self.momentum * self.vel[k] + p.grad
            p.data -= lr * self.vel[k]

    def state_dict(self):
        return {"type": "sgd_momentum", "vel": {k: v.copy() for k, v in self.vel.items()}}

    def load_state_dict(self, state):
        for k in self.params:
            self.vel[k] = state["vel"][k].copy()


def make_optimizer(config: TrainConfig, params):
    if config.optimizer == "adaptive_moments":
        return AdaptiveMoments(params, config.beta1, config.beta2, config.adam_eps)
    if config.optimizer == "sgd_momentum":
        return SGDMomentum(params, config.momentum)
    raise ValueError(f"unknown optimizer {config.optimizer!r}")


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------

class Trainer:
    def __init__(self, model: FlowNet, config: TrainConfig):
        self.model = model
        self.config = config
        self.optimizer = make_optimizer(config, model.parameters())
        self.rng = np.random.default_rng(config.seed)
        self.epoch = 0

    @property
    def lr(self) -> float:
        return self.config.base_lr * self.config.lr_gamma ** self.epoch

    def train_epoch(self, dataset) -> EpochReport:
        """One pass over the shuffled dataset; decays the LR at the end."""
        if not dataset:
            raise ValueError("train_epoch: empty dataset")
        lr = self.lr
        order = self.rng.permutation(len(dataset))
        mods, angs, aees = [], [], []
        skipped = 0
        for pos, idx in enumerate(order):
            sample = augment_flip(dataset[idx], self.rng, self.config.flip_probability)
            if not sample.flow.valid.any():
                skipped += 1
                continue
            x = Tensor(sample.hist.data.astype(self.model.dtype))
            trace = self.model.forward(x)
            gt = sample.flow.as_array()
            total = trace_loss(
                trace,
                gt,
                sample.flow.valid,
                self.config.loss_variant,
                self.config.lambda_mod,
                self.config.lambda_ang,
            )
            if not np.isfinite(total.item()):
                raise NumericalError(
                    f"non-finite loss at epoch {self.epoch}, sample index {int(idx)} "
                    f"(position {pos} in shuffle)"
                )
            total.backward()
            self.optimizer.step(lr)
            self.model.zero_grad()

            final = MaskedFlowPair(trace.prediction.detach(), gt, sample.flow.valid)
            with no_grad():
                mods.append(loss_mod(final).item())
                angs.append(loss_ang(final).item())
            aees.append(metric_aee(final))

        self.epoch += 1
        return EpochReport(
            epoch=self.epoch - 1,
            loss_mod=float(np.mean(mods)) if mods else float("nan"),
            loss_ang=float(np.mean(angs)) if angs else float("nan"),
            aee=float(np.mean(aees)) if aees else float("nan"),
            lr=lr,
            skipped=skipped,
        )

    # -- checkpointing --------------------------------------------------

    def save_checkpoint(self, path):
        checkpoint_save(self.model, self.optimizer.state_dict(), path, trainer=self)

    @classmethod
    def resume(cls, path):
        model, bundle = checkpoint_load(path)
        config = TrainConfig(**bundle.train_config)
        trainer = cls(model, config)
        trainer.optimizer.load_state_dict(bundle.optimizer_state)
        trainer.rng.bit_generator.state = bundle.rng_state
        trainer.epoch = bundle.epoch
        return trainer


def evaluate(model: FlowNet, dataset) -> EvalReport:
    """AEE/AAE on final snapshots; no augmentation, no gradients, no side effects."""
    per_seq = {}
    aees, aaes = [], []
    with no_grad():
        for sample in dataset:
            if not sample.flow.valid.any():
                continue
            x = Tensor(sample.hist.data.astype(model.dtype))
            trace = model.forward(x)
            pair = MaskedFlowPair(trace.prediction, sample.flow.as_array(), sample.flow.valid)
            aee = metric_aee(pair)
            aae = metric_aae(pair)
            aees.append(aee)
            aaes.append(aae)
            per_seq.setdefault(sample.sequence or "all", []).append((aee, aae))
    summary = {
        seq: (float(np.mean([a for a, _ in vals])), float(np.mean([b for _, b in vals])), len(vals))
        for seq, vals in per_seq.items()
    }
    return EvalReport(
        aee=float(np.mean(aees)) if aees else float("nan"),
        aae=float(np.mean(aaes)) if aaes else float("nan"),
        per_sequence=summary,
        num_samples=len(aees),
    )


def checkpoint_save(model: FlowNet, optimizer_state, path, trainer: Trainer = None):
    """Serialize weights, optimizer moments, schedule position, and rng state."""
    storage.write_checkpoint(
        path,
        model_config=model.config.to_dict(),
        params=model.state_arrays(),
        optimizer_state=optimizer_state,
        rng_state=trainer.rng.bit_generator.state if trainer else None,
        epoch=trainer.epoch if trainer else 0,
        train_config=asdict(trainer.config) if trainer else None,
    )


def checkpoint_load(path, expected_config: ModelConfig = None):
    """Rebuild the model from a checkpoint; optionally enforce a config match."""
    bundle = storage.read_checkpoint(path)
    config = ModelConfig.from_dict(bundle.model_config)
    if expected_config is not None and expected_config.to_dict() != config.to_dict():
        raise ValueError(
            f"checkpoint model config {config.to_dict()} does not match expected "
            f"{expected_config.to_dict()}"
        )
    model = build_model(config, seed=0)
    model.load_state_arrays(bundle.params)
    return model, bundle


def fit(model, train_data, config: TrainConfig, val_data=None, out_dir=None, resume_from=None,
        on_epoch=None):
    """Full training run; returns (trainer, train reports, validation reports).

    With ``out_dir`` set, writes the delimited epoch report, validation lines,
    training-curve figures, and periodic checkpoints there.
    """
    from . import reports as reporting

    if resume_from is not None:
        trainer = Trainer.resume(resume_from)
        model = trainer.model
        config = trainer.config
    else:
        trainer = Trainer(model, config)

    epoch_reports = []
    val_reports = []
    while trainer.epoch < config.epochs:
        report = trainer.train_epoch(train_data)
        epoch_reports.append(report)
        if on_epoch is not None:
            on_epoch(report)
        if val_data is not None and config.eval_every and (trainer.epoch % config.eval_every == 0 or trainer.epoch == config.epochs):
            val_reports.append((trainer.epoch, evaluate(model, val_data)))
        if out_dir is not None:
            reporting.append_epoch_line(out_dir, report)
            if config.checkpoint_every and trainer.epoch % config.checkpoint_every == 0:
                trainer.save_checkpoint(f"{out_dir}/ckpt_epoch{trainer.epoch:04d}.ckpt")
    if out_dir is not None:
        trainer.save_checkpoint(f"{out_dir}/ckpt_final.ckpt")
        reporting.write_validation_lines(out_dir, val_reports)
        reporting.plot_training_curves(out_dir, epoch_reports, val_reports)
    return trainer, epoch_reports, val_reports
