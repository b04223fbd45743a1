"""Gradient-check harness internals (the full suite runs in acceptance)."""

import numpy as np

from spikeflow.gradcheck import (
    check_if_soft,
    check_loss_ang,
    check_maxpool,
    check_upsample,
    relative_error,
    toy_config,
)
from spikeflow.model import build_model


def test_toy_config_is_valid_and_tiny():
    cfg = toy_config()
    cfg.validate()
    model = build_model(cfg, seed=0)
    assert model.count_parameters() < 5000
    assert cfg.activation == "soft" and cfg.dtype == "float64"


def test_toy_config_ablation_variants_validate():
    for kw in (dict(skip_mode="sum"), dict(downsample="strided"), dict(encoding="2d")):
        toy_config(**kw).validate()


def test_individual_checks_under_threshold():
    for fn in (check_maxpool, check_upsample, check_if_soft, check_loss_ang):
        assert fn(seed=1) < 1e-4


def test_relative_error_symmetry():
    a = np.array([1.0, 2.0, 3.0])
    b = np.array([1.0, 2.5, 3.0])
    assert relative_error(a, b) == relative_error(b, a)
