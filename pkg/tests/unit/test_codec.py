"""Conditional transforms, hyper path, refiner and in-process encode/decode."""

from __future__ import annotations

import dataclasses

import pytest
import torch
from compressai.layers import GDN
from torch.func import functional_call

from config.config import ContextNetConfig
from models.codec import (
    FLAG_CONDITIONAL,
    FLAG_DECODER_ONLY,
    FLAG_ENCODER_ONLY,
    FLAG_NO_PIP,
    FLAG_ZEROS,
    MODEL_FLAGS_MASK,
    AnalysisTransform,
    HyperAnalysis,
    HyperRefiner,
    HyperSynthesis,
    ModelVariant,
    PointCloudCodec,
    SynthesisTransform,
    analysis,
    hyper_analysis,
    hyper_refine,
    hyper_synthesis,
    synthesis,
)
from models.context_net import MultiScaleContext, context_fingerprint
from models.entropy import SIGMA_MIN
from models.layers import ShapeError

TINY_CONTEXT = ContextNetConfig(c_channels=2, c_hyper_channels=3, pip_width=2)


def _tiny_variant(**overrides) -> ModelVariant:
    return dataclasses.replace(
        ModelVariant(n_channels=8, m_channels=8, context=TINY_CONTEXT), **overrides
    )


def _context(height: int, width: int, channels: int = 2, hyper: int = 3) -> MultiScaleContext:
    return MultiScaleContext(
        c1=torch.rand(1, channels, height, width),
        c2=torch.rand(1, channels, height // 2, width // 2),
        c3=torch.rand(1, channels, height // 4, width // 4),
        c_hyper=torch.rand(1, hyper, height // 16, width // 16),
    )


def _lift_gdn(module: torch.nn.Module) -> None:
    """Move GDN reparametrised weights off their lower bound so differences are two-sided."""

    with torch.no_grad():
        for child in module.modules():
            if isinstance(child, GDN):
                child.beta.add_(0.05)
                child.gamma.add_(0.05)


def _gradcheck(module: torch.nn.Module, inputs, eps: float = 1e-3) -> bool:
    module = module.double()
    _lift_gdn(module)
    names = [name for name, _ in module.named_parameters()]
    params = tuple(
        p.detach().clone().requires_grad_(True) for _, p in module.named_parameters()
    )

    def mean_output(*flat):
        out = functional_call(module, dict(zip(names, flat)), inputs)
        if hasattr(out, "mu"):
            return out.mu.mean() + out.sigma.mean()
        return out.mean()

    return torch.autograd.gradcheck(mean_output, params, eps=eps, atol=1e-5, rtol=1e-3)


def test_header_flags_per_variant():
    assert _tiny_variant().header_flags() == FLAG_CONDITIONAL
    assert _tiny_variant().header_flags(zeros=True) == FLAG_CONDITIONAL | FLAG_ZEROS
    assert _tiny_variant(inject_decoder=False).header_flags() == FLAG_CONDITIONAL | FLAG_ENCODER_ONLY
    assert _tiny_variant(inject_encoder=False).header_flags() == FLAG_CONDITIONAL | FLAG_DECODER_ONLY
    assert _tiny_variant(use_pip=False).header_flags() & FLAG_NO_PIP
    assert _tiny_variant(conditional=False).header_flags(zeros=True) == 0
    assert not MODEL_FLAGS_MASK & FLAG_ZEROS


def test_analysis_shape_and_unconditional_ignores_context():
    torch.manual_seed(0)
    net = AnalysisTransform(8, 8)
    image = torch.rand(1, 3, 64, 128)

    y = analysis(image, _context(64, 128), net)

    assert y.shape == (1, 8, 4, 8)
    torch.testing.assert_close(y, analysis(image, None, net), rtol=0, atol=0)


def test_conditional_analysis_uses_context():
    torch.manual_seed(1)
    net = AnalysisTransform(8, 8, ctx_channels=2)
    image = torch.rand(1, 3, 64, 64)

    first = net(image, _context(64, 64))
    second = net(image, _context(64, 64))

    assert first.shape == (1, 8, 4, 4)
    assert not torch.equal(first, second)
    with pytest.raises(ShapeError, match="context required"):
        net(image, None)


def test_analysis_rejects_image_not_divisible_by_64():
    with pytest.raises(ShapeError, match="divisible by 64"):
        analysis(torch.rand(1, 3, 48, 64), None, AnalysisTransform(4, 4))


def test_analysis_gradients_match_finite_differences():
    torch.manual_seed(2)

    assert _gradcheck(AnalysisTransform(8, 8), (torch.rand(1, 3, 64, 64, dtype=torch.float64),))


def test_synthesis_shape_range_and_determinism():
    torch.manual_seed(3)
    net = SynthesisTransform(8, 8, ctx_channels=2)
    y_hat = torch.round(torch.randn(1, 8, 4, 4) * 3)
    ctx = _context(64, 64)

    first = synthesis(y_hat, ctx, net)
    second = synthesis(y_hat, ctx, net)

    assert first.shape == (1, 3, 64, 64)
    assert torch.all((first >= 0) & (first <= 1))
    assert torch.equal(first, second)


def test_encoder_only_synthesis_ignores_context():
    torch.manual_seed(4)
    model = PointCloudCodec(_tiny_variant(inject_decoder=False))
    y_hat = torch.round(torch.randn(1, 8, 4, 4))

    assert model.synthesis.ctx_channels == 0
    with_ctx = synthesis(y_hat, _context(64, 64), model.synthesis)
    without = synthesis(y_hat, None, model.synthesis)
    assert torch.equal(with_ctx, without)


def test_synthesis_gradients_match_finite_differences():
    torch.manual_seed(5)
    y_hat = torch.randn(1, 8, 4, 4, dtype=torch.float64)

    assert _gradcheck(SynthesisTransform(8, 8), (y_hat,))


def test_hyper_path_shapes():
    torch.manual_seed(6)
    y = torch.randn(1, 8, 4, 8)

    z = hyper_analysis(y, HyperAnalysis(8, 8))
    z_hyper = hyper_synthesis(torch.round(z), HyperSynthesis(8, 8))

    assert z.shape == (1, 8, 1, 2)
    assert z_hyper.shape == (1, 16, 4, 8)


def test_hyper_path_gradients_match_finite_differences():
    """Full hyper path at the library default step.

    A 1e-3 step can carry a LeakyReLU input across zero, where the one-sided slopes
    differ, so this check uses eps=1e-6. The 1e-3 step is checked on the kink-free
    variant below.
    """

    torch.manual_seed(7)
    hyper = torch.nn.Sequential(HyperAnalysis(4, 4), HyperSynthesis(4, 4))

    assert _gradcheck(hyper, (torch.randn(1, 4, 4, 4, dtype=torch.float64),), eps=1e-6)


def test_hyper_path_without_kinks_passes_the_coarse_step():
    torch.manual_seed(7)
    hyper = torch.nn.Sequential(HyperAnalysis(4, 4), HyperSynthesis(4, 4))
    activations = [m for m in hyper.modules() if isinstance(m, torch.nn.LeakyReLU)]
    for activation in activations:
        activation.negative_slope = 1.0

    assert len(activations) == 4
    assert _gradcheck(hyper, (torch.randn(1, 4, 4, 4, dtype=torch.float64),), eps=1e-3)


def test_refiner_outputs_floor_bounded_scales():
    torch.manual_seed(8)
    refiner = HyperRefiner(8, 3)
    z_hyper = torch.randn(1, 16, 4, 4)

    params = hyper_refine(z_hyper, torch.rand(1, 3, 4, 4), refiner)
    zero_ctx = hyper_refine(z_hyper, None, refiner)

    for result in (params, zero_ctx):
        assert result.mu.shape == (1, 8, 4, 4)
        assert result.sigma.shape == (1, 8, 4, 4)
        assert torch.all(result.sigma >= SIGMA_MIN)
    with pytest.raises(ShapeError, match="c_hyper"):
        refiner(z_hyper, torch.rand(1, 3, 2, 2))


def test_refiner_gradients_match_finite_differences():
    torch.manual_seed(9)
    inputs = (torch.randn(1, 8, 2, 2, dtype=torch.float64), torch.rand(1, 3, 2, 2, dtype=torch.float64))

    assert _gradcheck(HyperRefiner(4, 3), inputs)


def test_forward_produces_non_negative_rates():
    torch.manual_seed(10)
    model = PointCloudCodec(_tiny_variant())
    generator = torch.Generator().manual_seed(0)

    out = model(torch.rand(2, 3, 64, 64), torch.rand(2, 1, 64, 64), generator=generator)

    assert out.x_hat.shape == (2, 3, 64, 64)
    assert out.c_pre.shape == (2, 3, 64, 64)
    assert out.rate_y.item() >= 0 and out.rate_z.item() >= 0
    assert torch.isfinite(out.rate_y) and torch.isfinite(out.rate_z)


def test_forward_rejects_missing_depth_and_bad_size():
    model = PointCloudCodec(_tiny_variant())

    with pytest.raises(ShapeError, match="depth"):
        model(torch.rand(1, 3, 64, 64))
    with pytest.raises(ShapeError, match="divisible by 64"):
        model(torch.rand(1, 3, 64, 96), torch.rand(1, 1, 64, 96))


def test_detached_prediction_keeps_codec_gradient_off_pip():
    torch.manual_seed(11)
    model = PointCloudCodec(_tiny_variant())
    out = model(torch.rand(1, 3, 64, 64), torch.rand(1, 1, 64, 64), detach_prediction=True)

    out.x_hat.mean().backward()

    assert all(p.grad is None or not p.grad.any() for p in model.context_net.pip.parameters())
    assert any(p.grad is not None and p.grad.any() for p in model.context_net.fg.parameters())


@pytest.mark.parametrize(
    "overrides",
    [{}, {"conditional": False}, {"inject_decoder": False}, {"use_ff": False}, {"zeros_input": True}],
)
def test_encode_decode_reproduces_reconstruction(overrides):
    torch.manual_seed(12)
    model = PointCloudCodec(_tiny_variant(**overrides)).eval()
    image = torch.rand(1, 3, 64, 128)
    depth = torch.rand(1, 1, 64, 128)

    pair, params, x_hat, ctx = model.encode(image, depth)
    decoded, decoder_ctx = model.decode(pair, depth)

    assert pair.y_hat.dtype == torch.int32 and pair.z_hat.dtype == torch.int32
    assert pair.y_hat.shape == (1, 8, 4, 8)
    assert torch.equal(decoded, x_hat)
    if ctx is not None:
        assert context_fingerprint(ctx) == context_fingerprint(decoder_ctx)
