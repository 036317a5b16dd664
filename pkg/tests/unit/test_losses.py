"""Rate-distortion objective on fixture patches."""

import dataclasses
import math

import numpy as np
import pytest
import torch

from models.context_net import prediction_loss
from models.entropy import gaussian_likelihood
from training.batches import FrameStore, centre_patches
from training.losses import (
    PIXEL_SCALE,
    DivergenceError,
    combine,
    distortion,
    rate_per_pixel,
    total_loss,
)


@pytest.fixture(scope="module")
def patches(projected_manifests):
    return centre_patches(FrameStore(projected_manifests["train"]), 64)


def _loss(model, patches, config, **kwargs):
    with torch.no_grad():
        return total_loss(patches.images, patches.depths, model, 0, config.train, mode="round", **kwargs)


def test_components_match_kernels(tiny_model, tiny_config, patches):
    _, components = _loss(tiny_model, patches, tiny_config, color_seed=11)

    with torch.no_grad():
        output = tiny_model(patches.images, patches.depths, mode="round")
        pixels = patches.images.shape[0] * 64 * 64
        rate_y = -torch.log2(gaussian_likelihood(output.y_residual, output.params.sigma)).sum() / pixels
        rate_z = -torch.log2(tiny_model.density.likelihood(output.z_hat)).sum() / pixels
        mse = PIXEL_SCALE * torch.mean((output.x_hat - patches.images) ** 2)
        pre = prediction_loss(output.c_pre, patches.images, 11)

    assert components.rate_y == pytest.approx(float(rate_y), rel=1e-5)
    assert components.rate_z == pytest.approx(float(rate_z), rel=1e-5)
    assert components.mse == pytest.approx(float(mse), rel=1e-5)
    assert components.pre_loss == pytest.approx(float(pre), rel=1e-5)
    assert components.alpha == 0.01
    assert components.rate_y >= 0 and components.rate_z >= 0
    expected = components.rate_y + components.rate_z + 0.016 * components.mse + 0.01 * components.pre_loss
    assert components.loss == pytest.approx(expected, rel=1e-5)


def test_loss_is_linear_in_lambda(tiny_model, tiny_config, patches):
    _, low = _loss(tiny_model, patches, tiny_config, color_seed=3, lambda_=0.004)
    _, high = _loss(tiny_model, patches, tiny_config, color_seed=3, lambda_=0.032)

    assert high.loss - low.loss == pytest.approx(0.028 * low.mse, rel=1e-4)
    assert high.lambda_ == 0.032 and high.to_log()["lambda"] == 0.032


def test_zero_alpha_ignores_colour_seed(tiny_model, tiny_config, patches):
    train = dataclasses.replace(tiny_config.train, alpha_schedule=[(0, 0.0)])
    config = dataclasses.replace(tiny_config, train=train)

    _, first = _loss(tiny_model, patches, config, color_seed=1)
    _, second = _loss(tiny_model, patches, config, color_seed=2)

    assert first.alpha == 0.0
    assert first.pre_loss != second.pre_loss
    assert first.loss == second.loss


def test_helpers_normalise_per_pixel():
    images = torch.zeros(2, 3, 4, 8)

    assert float(rate_per_pixel(torch.tensor(128.0), images)) == 2.0
    assert float(distortion(torch.full_like(images, 1 / 255), images)) == pytest.approx(1.0)


def test_non_finite_component_raises(tiny_model, patches):
    with torch.no_grad():
        output = tiny_model(patches.images, patches.depths, mode="round")
    broken = dataclasses.replace(output, rate_y=torch.tensor(math.nan))

    with pytest.raises(DivergenceError) as info:
        combine(broken, patches.images, lambda_=0.016, alpha=0.0)
    assert info.value.component == "rate_y"
    assert np.isnan(info.value.value)
