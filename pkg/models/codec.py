"""Hyperprior codec whose transforms and entropy model take the multi-scale depth context."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import torch
import torch.nn.functional as F
from compressai.layers import GDN
from compressai.models.utils import conv, deconv
from torch import nn

from config.config import ContextNetConfig
from models.context_net import ContextNet, MultiScaleContext
from models.entropy import (
    SIGMA_MIN,
    EntropyParameters,
    FactorizedDensity,
    LatentPair,
    build_gaussian_conditional,
    gaussian_likelihood,
    quantize,
)
from models.layers import ShapeError, check_divisible, check_spatial

FLAG_CONDITIONAL = 1 << 0
FLAG_ZEROS = 1 << 1
FLAG_ENCODER_ONLY = 1 << 2
FLAG_DECODER_ONLY = 1 << 3
FLAG_NO_PIP = 1 << 4
FLAG_NO_FG = 1 << 5
FLAG_NO_FF = 1 << 6
MODEL_FLAGS_MASK = 0x7F & ~FLAG_ZEROS


@dataclass(frozen=True)
class ModelVariant:
    """Architecture switches of one trained model; ``ablation`` names the recipe."""

    ablation: str = "full"
    n_channels: int = 192
    m_channels: int = 128
    lambda_index: int = 0
    conditional: bool = True
    inject_encoder: bool = True
    inject_decoder: bool = True
    use_pip: bool = True
    use_fg: bool = True
    use_ff: bool = True
    zeros_input: bool = False
    context: ContextNetConfig = field(default_factory=ContextNetConfig)

    @property
    def encoder_injection(self) -> bool:
        return self.conditional and self.use_fg and self.inject_encoder

    @property
    def decoder_injection(self) -> bool:
        return self.conditional and self.use_fg and self.inject_decoder

    @property
    def hyper_context(self) -> bool:
        return self.conditional and self.use_ff

    def header_flags(self, zeros: bool = False) -> int:
        flags = 0
        if self.conditional:
            flags |= FLAG_CONDITIONAL
            if not self.inject_decoder:
                flags |= FLAG_ENCODER_ONLY
            if not self.inject_encoder:
                flags |= FLAG_DECODER_ONLY
            if not self.use_pip:
                flags |= FLAG_NO_PIP
            if not self.use_fg:
                flags |= FLAG_NO_FG
            if not self.use_ff:
                flags |= FLAG_NO_FF
            if zeros or self.zeros_input:
                flags |= FLAG_ZEROS
        return flags


class AnalysisTransform(nn.Module):
    """Four stride-2 stages; c1, c2, c3 join before stages one to three."""

    def __init__(self, n: int, m: int, ctx_channels: int = 0) -> None:
        super().__init__()
        self.ctx_channels = ctx_channels
        self.stage1 = conv(3 + ctx_channels, n)
        self.gdn1 = GDN(n)
        self.stage2 = conv(n + ctx_channels, n)
        self.gdn2 = GDN(n)
        self.stage3 = conv(n + ctx_channels, n)
        self.gdn3 = GDN(n)
        self.stage4 = conv(n, m)

    def _join(self, x: torch.Tensor, c: Optional[torch.Tensor], name: str) -> torch.Tensor:
        if not self.ctx_channels:
            return x
        if c is None:
            raise ShapeError(f"{name}: context required by a conditional analysis transform")
        check_spatial(c, x.shape[-2:], name)
        return torch.cat([x, c], dim=1)

    def forward(self, x: torch.Tensor, ctx: Optional[MultiScaleContext] = None) -> torch.Tensor:
        check_divisible(x, 16, "image")
        c1, c2, c3 = (ctx.c1, ctx.c2, ctx.c3) if ctx is not None else (None, None, None)
        x = self.gdn1(self.stage1(self._join(x, c1, "c1")))
        x = self.gdn2(self.stage2(self._join(x, c2, "c2")))
        x = self.gdn3(self.stage3(self._join(x, c3, "c3")))
        return self.stage4(x)


class SynthesisTransform(nn.Module):
    """Mirror of the analysis; c3, c2, c1 join after upsampling stages two to four."""

    def __init__(self, n: int, m: int, ctx_channels: int = 0) -> None:
        super().__init__()
        self.ctx_channels = ctx_channels
        self.stage1 = deconv(m, n)
        self.igdn1 = GDN(n, inverse=True)
        self.stage2 = deconv(n, n)
        self.igdn2 = GDN(n, inverse=True)
        self.stage3 = deconv(n + ctx_channels, n)
        self.igdn3 = GDN(n, inverse=True)
        if ctx_channels:
            self.stage4 = deconv(n + ctx_channels, n)
            self.igdn4 = GDN(n, inverse=True)
            self.head = conv(n + ctx_channels, 3, kernel_size=3, stride=1)
        else:
            self.stage4 = deconv(n, 3)

    def _join(self, x: torch.Tensor, c: Optional[torch.Tensor], name: str) -> torch.Tensor:
        if not self.ctx_channels:
            return x
        if c is None:
            raise ShapeError(f"{name}: context required by a conditional synthesis transform")
        check_spatial(c, x.shape[-2:], name)
        return torch.cat([x, c], dim=1)

    def forward(self, y_hat: torch.Tensor, ctx: Optional[MultiScaleContext] = None) -> torch.Tensor:
        if y_hat.dim() != 4:
            raise ShapeError(f"latents: expected a 4-D batch, got {tuple(y_hat.shape)}")
        c1, c2, c3 = (ctx.c1, ctx.c2, ctx.c3) if ctx is not None else (None, None, None)
        x = self.igdn1(self.stage1(y_hat))
        x = self.igdn2(self.stage2(x))
        x = self.igdn3(self.stage3(self._join(x, c3, "c3")))
        if not self.ctx_channels:
            return self.stage4(x)
        x = self.igdn4(self.stage4(self._join(x, c2, "c2")))
        return self.head(self._join(x, c1, "c1"))


class HyperAnalysis(nn.Module):
    def __init__(self, n: int, m: int) -> None:
        super().__init__()
        self.net = nn.Sequential(
            conv(m, n, kernel_size=3, stride=1),
            nn.LeakyReLU(inplace=False),
            conv(n, n),
            nn.LeakyReLU(inplace=False),
            conv(n, n),
        )

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        check_divisible(y, 4, "latents")
        return self.net(y)


class HyperSynthesis(nn.Module):
    def __init__(self, n: int, m: int) -> None:
        super().__init__()
        self.net = nn.Sequential(
            deconv(n, m),
            nn.LeakyReLU(inplace=False),
            deconv(m, m * 3 // 2),
            nn.LeakyReLU(inplace=False),
            conv(m * 3 // 2, 2 * m, kernel_size=3, stride=1),
        )

    def forward(self, z_hat: torch.Tensor) -> torch.Tensor:
        return self.net(z_hat)


class HyperRefiner(nn.Module):
    """Three 3x3 convolutions over [z_hyper, c_hyper] emitting mu and sigma."""

    def __init__(self, m: int, hyper_channels: int) -> None:
        super().__init__()
        self.m = m
        self.hyper_channels = hyper_channels
        self.net = nn.Sequential(
            conv(2 * m + hyper_channels, 2 * m, kernel_size=3, stride=1),
            nn.GELU(),
            conv(2 * m, 2 * m, kernel_size=3, stride=1),
            nn.GELU(),
            conv(2 * m, 2 * m, kernel_size=3, stride=1),
        )

    def forward(
        self, z_hyper: torch.Tensor, c_hyper: Optional[torch.Tensor] = None
    ) -> EntropyParameters:
        if c_hyper is None:
            c_hyper = z_hyper.new_zeros(
                (z_hyper.shape[0], self.hyper_channels) + tuple(z_hyper.shape[-2:])
            )
        check_spatial(c_hyper, z_hyper.shape[-2:], "c_hyper")
        mu, raw_sigma = self.net(torch.cat([z_hyper, c_hyper], dim=1)).chunk(2, dim=1)
        return EntropyParameters(mu=mu, sigma=F.softplus(raw_sigma) + SIGMA_MIN)


@dataclass
class CodecOutput:
    """Forward pass products; rates are bit totals over the batch."""

    x_hat: torch.Tensor
    y_residual: torch.Tensor
    z_hat: torch.Tensor
    params: EntropyParameters
    rate_y: torch.Tensor
    rate_z: torch.Tensor
    c_pre: Optional[torch.Tensor] = None
    context: Optional[MultiScaleContext] = None


class PointCloudCodec(nn.Module):
    """Context network plus the conditional hyperprior codec of one ablation variant."""

    def __init__(self, variant: ModelVariant) -> None:
        super().__init__()
        self.variant = variant
        n, m = variant.n_channels, variant.m_channels
        ctx_cfg = variant.context
        self.context_net = (
            ContextNet(ctx_cfg, use_pip=variant.use_pip, use_ff=variant.use_ff)
            if variant.conditional
            else None
        )
        self.analysis = AnalysisTransform(
            n, m, ctx_cfg.c_channels if variant.encoder_injection else 0
        )
        self.synthesis = SynthesisTransform(
            n, m, ctx_cfg.c_channels if variant.decoder_injection else 0
        )
        self.hyper_analysis = HyperAnalysis(n, m)
        self.hyper_synthesis = HyperSynthesis(n, m)
        self.refiner = HyperRefiner(m, ctx_cfg.c_hyper_channels)
        self.density = FactorizedDensity(n)
        self.gaussian = build_gaussian_conditional()

    def context(
        self, depth: Optional[torch.Tensor], zeros: bool = False, detach_prediction: bool = False
    ):
        """``(c_pre, ctx)``; both None for an unconditional model."""

        if self.context_net is None:
            return None, None
        if depth is None:
            raise ShapeError("depth: a conditional model needs a depth raster")
        zeros = zeros or self.variant.zeros_input
        if detach_prediction and self.context_net.pip is not None:
            source = torch.zeros_like(depth) if zeros else depth
            c_pre = self.context_net.pip(source)
            return c_pre, self.context_net.mine(c_pre.detach())
        return self.context_net(depth, zeros=zeros)

    def _encoder_ctx(self, ctx: Optional[MultiScaleContext]) -> Optional[MultiScaleContext]:
        return ctx if self.variant.encoder_injection else None

    def _decoder_ctx(self, ctx: Optional[MultiScaleContext]) -> Optional[MultiScaleContext]:
        return ctx if self.variant.decoder_injection else None

    def _hyper_ctx(self, ctx: Optional[MultiScaleContext]) -> Optional[torch.Tensor]:
        return ctx.c_hyper if (ctx is not None and self.variant.hyper_context) else None

    def entropy_parameters(
        self, z_hat: torch.Tensor, ctx: Optional[MultiScaleContext]
    ) -> EntropyParameters:
        return self.refiner(self.hyper_synthesis(z_hat), self._hyper_ctx(ctx))

    def forward(
        self,
        image: torch.Tensor,
        depth: Optional[torch.Tensor] = None,
        *,
        mode: str = "noise",
        zeros: bool = False,
        generator: Optional[torch.Generator] = None,
        detach_prediction: bool = False,
    ) -> CodecOutput:
        check_divisible(image, 64, "image")
        c_pre, ctx = self.context(depth, zeros, detach_prediction)
        y = self.analysis(image, self._encoder_ctx(ctx))
        z = self.hyper_analysis(y)
        z_hat = quantize(z, mode, generator=generator)
        params = self.entropy_parameters(z_hat, ctx)
        if mode == "noise":
            y_tilde = quantize(y, "noise", generator=generator)
            residual = y_tilde - params.mu
        else:
            residual = torch.round(y - params.mu)
            y_tilde = residual + params.mu
        x_hat = self.synthesis(y_tilde, self._decoder_ctx(ctx))
        rate_y = -torch.log2(gaussian_likelihood(residual, params.sigma, self.gaussian)).sum()
        rate_z = -torch.log2(self.density.likelihood(z_hat)).sum()
        return CodecOutput(
            x_hat=x_hat,
            y_residual=residual,
            z_hat=z_hat,
            params=params,
            rate_y=rate_y,
            rate_z=rate_z,
            c_pre=c_pre,
            context=ctx,
        )

    @torch.no_grad()
    def encode(
        self, image: torch.Tensor, depth: Optional[torch.Tensor] = None, zeros: bool = False
    ):
        """Round-mode latents, their entropy parameters, the reconstruction and the context."""

        check_divisible(image, 64, "image")
        _, ctx = self.context(depth, zeros)
        y = self.analysis(image, self._encoder_ctx(ctx))
        z_hat = torch.round(self.hyper_analysis(y))
        params = self.entropy_parameters(z_hat, ctx)
        residual = torch.round(y - params.mu)
        x_hat = self.synthesis(residual + params.mu, self._decoder_ctx(ctx)).clamp(0.0, 1.0)
        pair = LatentPair(y_hat=residual.to(torch.int32), z_hat=z_hat.to(torch.int32))
        return pair, params, x_hat, ctx

    @torch.no_grad()
    def decode(
        self,
        pair: LatentPair,
        depth: Optional[torch.Tensor] = None,
        zeros: bool = False,
        params: Optional[EntropyParameters] = None,
        ctx: Optional[MultiScaleContext] = None,
    ):
        if ctx is None:
            _, ctx = self.context(depth, zeros)
        if params is None:
            params = self.entropy_parameters(pair.z_hat.to(torch.float32), ctx)
        y_hat = pair.y_hat.to(params.mu.dtype) + params.mu
        x_hat = self.synthesis(y_hat, self._decoder_ctx(ctx)).clamp(0.0, 1.0)
        return x_hat, ctx

    def aux_loss(self) -> torch.Tensor:
        return self.density.aux_loss()


def analysis(
    image: torch.Tensor, ctx: Optional[MultiScaleContext], net: AnalysisTransform
) -> torch.Tensor:
    check_divisible(image, 64, "image")
    return net(image, ctx if net.ctx_channels else None)


def synthesis(
    y_hat: torch.Tensor, ctx: Optional[MultiScaleContext], net: SynthesisTransform
) -> torch.Tensor:
    return net(y_hat, ctx if net.ctx_channels else None).clamp(0.0, 1.0)


def hyper_analysis(y: torch.Tensor, net: HyperAnalysis) -> torch.Tensor:
    return net(y)


def hyper_synthesis(z_hat: torch.Tensor, net: HyperSynthesis) -> torch.Tensor:
    return net(z_hat)


def hyper_refine(
    z_hyper: torch.Tensor, c_hyper: Optional[torch.Tensor], net: HyperRefiner
) -> EntropyParameters:
    return net(z_hyper, c_hyper)


__all__ = [
    "AnalysisTransform",
    "CodecOutput",
    "FLAG_CONDITIONAL",
    "FLAG_DECODER_ONLY",
    "FLAG_ENCODER_ONLY",
    "FLAG_NO_FF",
    "FLAG_NO_FG",
    "FLAG_NO_PIP",
    "FLAG_ZEROS",
    "HyperAnalysis",
    "HyperRefiner",
    "HyperSynthesis",
    "MODEL_FLAGS_MASK",
    "ModelVariant",
    "PointCloudCodec",
    "SynthesisTransform",
    "analysis",
    "hyper_analysis",
    "hyper_refine",
    "hyper_synthesis",
    "synthesis",
]
