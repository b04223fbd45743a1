"""Spiking U-Net optical flow from event-camera streams.

Event histograms feed a fully spiking encoder-decoder with 3D temporal
convolutions; stateless integrate-and-fire neurons train end to end with a
sigmoid surrogate gradient against a combined endpoint-norm + angular loss.
"""

from .autodiff import ShapeError, Tensor, no_grad, ops
from .events import (
    COMBINED,
    SEPARATE,
    Event,
    FlowMap,
    HistogramSequence,
    encode_histograms,
    sliding_window,
)
from .layers import IFActivation, OutputPool, accumulate_prediction
from .losses import (
    EmptyMaskError,
    MaskedFlowPair,
    loss_ang,
    loss_combined,
    loss_mod,
    loss_relative,
    metric_aae,
    metric_aee,
    trace_loss,
)
from .model import FlowNet, ForwardTrace, ModelConfig, build_model, count_parameters
from .synthetic import Pattern, generate_synthetic_scene, make_flow_windows
from .training import (
    EpochReport,
    EvalReport,
    NumericalError,
    Sample,
    TrainConfig,
    Trainer,
    augment_flip,
    checkpoint_load,
    checkpoint_save,
    evaluate,
    fit,
)

__version__ = "0.1.0"
