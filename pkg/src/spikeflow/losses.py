"""Flow losses and evaluation metrics over masked flow maps.

Losses follow the two-term scheme: a mean endpoint-norm term and an angular
term on the epsilon-regularized cosine between prediction and ground truth,
clamped to (-1 + eps, 1 - eps) before acos so the gradient stays finite. Both
read only valid pixels. Metrics (AEE in pixels per ground-truth interval, AAE
in degrees) share the masking but never touch the tape.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops

DEFAULT_EPSILON = 1e-7
AAE_DEGENERATE_NORM = 1e-5  # pixels with |gt| or |pred| below this have no direction


class EmptyMaskError(ValueError):
    """Loss or metric evaluated on a mask with zero valid pixels."""


@dataclass
class MaskedFlowPair:
    """Prediction (2,H,W) vs ground truth (2,H,W) on a boolean validity mask."""

    prediction: Tensor
    ground_truth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        pred_shape = tuple(self.prediction.shape)
        if pred_shape != tuple(self.ground_truth.shape):
            raise ValueError(f"prediction {pred_shape} vs ground truth {self.ground_truth.shape}")
        if pred_shape[0] != 2 or self.valid.shape != pred_shape[1:]:
            raise ValueError(f"expected (2,H,W) flow with (H,W) mask, got {pred_shape} / {self.valid.shape}")
        self.n_pixels = int(self.valid.sum())
        if self.n_pixels < 1:
            raise EmptyMaskError("no valid pixels in mask")

    def prediction_array(self):
        p = self.prediction
        return p.data if isinstance(p, Tensor) else np.asarray(p)

    def _selected(self):
        pred = self.prediction
        if not isinstance(pred, Tensor):
            pred = Tensor(pred)
        pred_sel = ops.select_pixels(pred, self.valid)
        gt_sel = self.ground_truth[:, self.valid].astype(pred.dtype)
        return pred_sel, gt_sel


def loss_mod(pair: MaskedFlowPair) -> Tensor:
    """Mean endpoint norm: mean_valid sqrt((du)^2 + (dv)^2); subgradient 0 at 0."""
    pred_sel, gt_sel = pair._selected()
    diff = ops.sub(pred_sel, Tensor(gt_sel))
    norms = ops.sqrt(ops.sum_axis(ops.square(diff), axis=0))
    return ops.scale(ops.sum_all(norms), 1.0 / pair.n_pixels)


def loss_ang(pair: MaskedFlowPair, epsilon: float = DEFAULT_EPSILON) -> Tensor:
    """Mean acos of the regularized cosine between prediction and ground truth.

    cos = (gt . pred + eps) / (|gt| |pred| + eps), clamped to
    (-1 + eps, 1 - eps); clamped pixels get zero gradient.
    """
    pred_sel, gt_sel = pair._selected()
    dot = ops.sum_axis(ops.mul(pred_sel, Tensor(gt_sel)), axis=0)
    pred_norm = ops.sqrt(ops.sum_axis(ops.square(pred_sel), axis=0))
    gt_norm = np.linalg.norm(gt_sel, axis=0)
    denom = ops.add_scalar(ops.mul(pred_norm, Tensor(gt_norm.astype(gt_sel.dtype))), epsilon)
    cos = ops.div(ops.add_scalar(dot, epsilon), denom)
    angles = ops.acos(ops.clamp(cos, -1.0 + epsilon, 1.0 - epsilon))
    return ops.scale(ops.sum_all(angles), 1.0 / pair.n_pixels)


def loss_combined(pair: MaskedFlowPair, lambda_mod: float = 1.0, lambda_ang: float = 1.0) -> Tensor:
    if lambda_mod < 0 or lambda_ang < 0:
        raise ValueError(f"loss weights must be non-negative, got ({lambda_mod}, {lambda_ang})")
    return ops.add(
        ops.scale(loss_mod(pair), lambda_mod),
        ops.scale(loss_ang(pair), lambda_ang),
    )


def loss_relative(pair: MaskedFlowPair, epsilon: float = DEFAULT_EPSILON) -> Tensor:
    """Mean endpoint norm scaled by 1/(|gt| + eps); blows up toward 1/eps on
    zero-flow ground truth by design."""
    pred_sel, gt_sel = pair._selected()
    diff = ops.sub(pred_sel, Tensor(gt_sel))
    norms = ops.sqrt(ops.sum_axis(ops.square(diff), axis=0))
    inv_gt = (1.0 / (np.linalg.norm(gt_sel, axis=0) + epsilon)).astype(gt_sel.dtype)
    weighted = ops.mul(norms, Tensor(inv_gt))
    return ops.scale(ops.sum_all(weighted), 1.0 / pair.n_pixels)


LOSS_VARIANTS = ("combined", "mod", "ang", "relative")


def loss_by_name(pair: MaskedFlowPair, variant: str, lambda_mod=1.0, lambda_ang=1.0) -> Tensor:
    if variant == "combined":
        return loss_combined(pair, lambda_mod, lambda_ang)
    if variant == "mod":
        return loss_mod(pair)
    if variant == "ang":
        return loss_ang(pair)
    if variant == "relative":
        return loss_relative(pair)
    raise ValueError(f"unknown loss variant {variant!r}; expected one of {LOSS_VARIANTS}")


def trace_loss(trace, ground_truth, valid, variant="combined", lambda_mod=1.0, lambda_ang=1.0):
    """Total training loss: the chosen loss summed over every pool snapshot,
    all snapshots weighted equally."""
    total = None
    for snap in trace.snapshots:
        pair = MaskedFlowPair(snap, ground_truth, valid)
        term = loss_by_name(pair, variant, lambda_mod, lambda_ang)
        total = term if total is None else ops.add(total, term)
    return total


# ---------------------------------------------------------------------------
# metrics (no gradients)
# ---------------------------------------------------------------------------

def metric_aee(pair: MaskedFlowPair) -> float:
    """Average endpoint error over valid pixels."""
    pred = pair.prediction_array()[:, pair.valid]
    gt = pair.ground_truth[:, pair.valid]
    return float(np.mean(np.linalg.norm(pred - gt, axis=0)))


def metric_aae(pair: MaskedFlowPair, degenerate_norm: float = AAE_DEGENERATE_NORM) -> float:
    """Average angular error in degrees over valid pixels.

    Pixels where either vector's norm falls below ``degenerate_norm`` carry no
    usable direction and are skipped; if every pixel is degenerate the error
    is reported as 0.
    """
    pred = pair.prediction_array()[:, pair.valid]
    gt = pair.ground_truth[:, pair.valid]
    pn = np.linalg.norm(pred, axis=0)
    gn = np.linalg.norm(gt, axis=0)
    usable = (pn >= degenerate_norm) & (gn >= degenerate_norm)
    if not np.any(usable):
        return 0.0
    cos = np.clip((pred[:, usable] * gt[:, usable]).sum(axis=0) / (pn[usable] * gn[usable]), -1.0, 1.0)
    return float(np.degrees(np.mean(np.arccos(cos))))
