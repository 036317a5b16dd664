"""Point-to-image prediction, feature generation/fusion and the colour augmentation."""

from __future__ import annotations

import numpy as np
import pytest
import torch
from torch.func import functional_call

from config.config import ContextNetConfig
from models.context_net import (
    ColorTransform,
    ContextNet,
    FeatureFusion,
    FeatureGeneration,
    PointToImagePrediction,
    apply_color_transform,
    assemble_context,
    context_fingerprint,
    depth_to_tensor,
    draw_color_transform,
    feature_fusion,
    feature_generation,
    pip_forward,
    prediction_loss,
    random_color_transform,
)
from models.layers import ShapeError, zero_biases
from projection.depth_map import EqualizedDepthMap


def _gradcheck_parameters(module: torch.nn.Module, *inputs: torch.Tensor) -> bool:
    """Central differences of the mean output(s) against autograd for every parameter."""

    module = module.double()
    names = [name for name, _ in module.named_parameters()]
    params = tuple(
        p.detach().clone().requires_grad_(True) for _, p in module.named_parameters()
    )
    inputs = tuple(t.double() for t in inputs)

    def mean_output(*flat):
        out = functional_call(module, dict(zip(names, flat)), inputs)
        if isinstance(out, tuple):
            return sum(o.mean() for o in out)
        return out.mean()

    return torch.autograd.gradcheck(mean_output, params, eps=1e-3, atol=1e-5, rtol=1e-3)


def test_pip_shape_and_range():
    torch.manual_seed(0)
    net = PointToImagePrediction(width=4)
    depth = EqualizedDepthMap.from_values(
        np.random.default_rng(0).integers(0, 256, size=(64, 96)).astype(np.uint8)
    )

    out = pip_forward(depth, net)

    assert out.shape == (1, 3, 64, 96)
    assert torch.all(out > 0) and torch.all(out < 1)


def test_pip_constant_on_zero_depth():
    torch.manual_seed(1)
    net = PointToImagePrediction(width=4)
    with torch.no_grad():
        net.tail.bias.zero_()

    out = net(torch.zeros(1, 1, 32, 32))

    expected = out[..., :1, :1].expand_as(out)
    torch.testing.assert_close(out, expected, rtol=0, atol=1e-6)


def test_pip_rejects_non_divisible_input():
    net = PointToImagePrediction(width=2)

    with pytest.raises(ShapeError, match="divisible by 16"):
        net(torch.zeros(1, 1, 24, 32))


def test_pip_gradients_match_finite_differences():
    torch.manual_seed(2)
    net = PointToImagePrediction(width=2)

    assert _gradcheck_parameters(net, torch.rand(1, 1, 16, 16))


def test_feature_generation_scales():
    torch.manual_seed(3)
    net = FeatureGeneration(3, 4)

    c1, c2, c3 = feature_generation(torch.rand(1, 3, 64, 32), net)

    assert c1.shape == (1, 4, 64, 32)
    assert c2.shape == (1, 4, 32, 16)
    assert c3.shape == (1, 4, 16, 8)


def test_feature_generation_zero_input_zero_bias():
    torch.manual_seed(4)
    net = zero_biases(FeatureGeneration(3, 4))

    outputs = net(torch.zeros(1, 3, 32, 32))

    for tensor in outputs:
        assert torch.count_nonzero(tensor) == 0


def test_feature_generation_gradients_match_finite_differences():
    torch.manual_seed(5)
    net = FeatureGeneration(3, 2)

    assert _gradcheck_parameters(net, torch.rand(1, 3, 16, 16))


def test_feature_fusion_shape_and_zero_propagation():
    torch.manual_seed(6)
    net = zero_biases(FeatureFusion(4, 6))
    c1, c2, c3 = torch.rand(1, 4, 64, 64), torch.rand(1, 4, 32, 32), torch.rand(1, 4, 16, 16)

    assert feature_fusion(c1, c2, c3, net).shape == (1, 6, 4, 4)
    zero = net(torch.zeros_like(c1), torch.zeros_like(c2), torch.zeros_like(c3))
    assert torch.count_nonzero(zero) == 0


def test_feature_fusion_rejects_mismatched_scales():
    net = FeatureFusion(2, 2)

    with pytest.raises(ShapeError, match="c3"):
        net(torch.rand(1, 2, 32, 32), torch.rand(1, 2, 16, 16), torch.rand(1, 2, 16, 16))


def test_feature_fusion_gradients_match_finite_differences():
    torch.manual_seed(7)
    net = FeatureFusion(2, 2)
    inputs = (torch.rand(1, 2, 16, 16), torch.rand(1, 2, 8, 8), torch.rand(1, 2, 4, 4))

    assert _gradcheck_parameters(net, *inputs)


@pytest.mark.parametrize("height, width", [(16, 16), (32, 48), (64, 128)])
def test_assemble_context_scale_ratios(height, width):
    torch.manual_seed(8)
    net = ContextNet(ContextNetConfig(c_channels=3, c_hyper_channels=5, pip_width=2))
    depth = torch.rand(1, 1, height, width)

    ctx = assemble_context(depth, net)

    assert ctx.c1.shape == (1, 3, height, width)
    assert ctx.c2.shape == (1, 3, height // 2, width // 2)
    assert ctx.c3.shape == (1, 3, height // 4, width // 4)
    assert ctx.c_hyper.shape == (1, 5, height // 16, width // 16)
    assert all(torch.isfinite(t).all() for t in ctx.tensors())


def test_zeros_mode_changes_values_not_shapes():
    torch.manual_seed(9)
    net = ContextNet(ContextNetConfig(c_channels=3, c_hyper_channels=4, pip_width=2))
    depth = depth_to_tensor(
        np.random.default_rng(1).integers(1, 256, size=(32, 32)).astype(np.uint8)
    )

    with torch.no_grad():
        regular = assemble_context(depth, net)
        zeros = assemble_context(depth, net, zeros=True)
        repeat = assemble_context(depth, net)

    assert [t.shape for t in regular.tensors()] == [t.shape for t in zeros.tensors()]
    assert context_fingerprint(regular) != context_fingerprint(zeros)
    assert context_fingerprint(regular) == context_fingerprint(repeat)


def test_context_without_pip_or_fusion():
    torch.manual_seed(10)
    net = ContextNet(
        ContextNetConfig(c_channels=2, c_hyper_channels=2, pip_width=2),
        use_pip=False,
        use_ff=False,
    )

    c_pre, ctx = net(torch.rand(1, 1, 32, 32))

    assert c_pre is None
    assert ctx.c_hyper is None
    assert net.fg.el1.conv.in_channels == 1


def test_neutral_colour_transform_is_identity():
    image = torch.rand(3, 8, 8)

    out = apply_color_transform(image, ColorTransform())

    torch.testing.assert_close(out, image)


def test_inversion_only_colour_transform():
    image = torch.rand(3, 8, 8)

    out = apply_color_transform(image, ColorTransform(invert=True))

    torch.testing.assert_close(out, 1.0 - image)


def test_colour_draws_stay_in_range():
    generator = torch.Generator().manual_seed(0)
    draws = [draw_color_transform(generator) for _ in range(200)]

    assert all(0.5 <= d.contrast <= 1.5 for d in draws)
    assert all(-0.25 <= d.brightness <= 0.25 for d in draws)
    assert 0 < sum(d.invert for d in draws) < 200


@pytest.mark.parametrize("seed", range(20))
def test_colour_transform_is_monotone_per_channel(seed):
    image = torch.rand(2, 3, 6, 7, generator=torch.Generator().manual_seed(100 + seed))

    out = random_color_transform(image, seed)

    assert out.shape == image.shape
    assert torch.all((out >= 0) & (out <= 1))
    for sample in range(2):
        for channel in range(3):
            source = image[sample, channel].reshape(-1)
            mapped = out[sample, channel].reshape(-1)[torch.argsort(source)]
            steps = mapped[1:] - mapped[:-1]
            assert torch.all(steps >= -1e-7) or torch.all(steps <= 1e-7)


def test_colour_transform_is_seeded():
    image = torch.rand(3, 8, 8)

    torch.testing.assert_close(random_color_transform(image, 5), random_color_transform(image, 5))


def test_prediction_loss_values():
    image = torch.rand(1, 3, 8, 8)
    target = random_color_transform(image, 3)

    assert prediction_loss(target, image, 3).item() == pytest.approx(0.0)
    assert prediction_loss(target + 0.1, image, 3).item() == pytest.approx(0.01, rel=1e-5)

    pred = torch.rand(1, 3, 8, 8)
    flat_pred, flat_target = pred.reshape(-1).tolist(), target.reshape(-1).tolist()
    reference = sum((p - t) ** 2 for p, t in zip(flat_pred, flat_target)) / len(flat_pred)
    assert prediction_loss(pred, image, 3).item() == pytest.approx(reference, abs=1e-7)


def test_prediction_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        prediction_loss(torch.rand(1, 3, 8, 8), torch.rand(1, 3, 8, 4), 0)
