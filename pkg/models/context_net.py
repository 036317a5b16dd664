"""Point-to-image prediction and multi-scale context mining over equalized depth maps."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from config.config import ContextNetConfig
from models.layers import (
    AttentionBlock,
    ResidualBlock,
    ShapeError,
    check_divisible,
    check_spatial,
    conv3x3,
)
from projection.depth_map import EqualizedDepthMap

DEPTH_LEVELS = 255.0


@dataclass
class MultiScaleContext:
    """Context set: c1 at H, c2 at H/2, c3 at H/4, c_hyper at H/16 (None when fusion is off)."""

    c1: torch.Tensor
    c2: torch.Tensor
    c3: torch.Tensor
    c_hyper: Optional[torch.Tensor]

    def tensors(self) -> Sequence[Optional[torch.Tensor]]:
        return (self.c1, self.c2, self.c3, self.c_hyper)


@dataclass(frozen=True)
class ColorTransform:
    contrast: float = 1.0
    brightness: float = 0.0
    invert: bool = False


def depth_to_tensor(depth: Union[EqualizedDepthMap, np.ndarray]) -> torch.Tensor:
    """uint8 levels to a 1x1xHxW float tensor in [0, 1]."""

    values = depth.values if isinstance(depth, EqualizedDepthMap) else np.asarray(depth)
    tensor = torch.from_numpy(np.ascontiguousarray(values, dtype=np.float32))
    return (tensor / DEPTH_LEVELS).reshape(1, 1, *values.shape)


class PointToImagePrediction(nn.Module):
    def __init__(self, width: int = 64) -> None:
        super().__init__()
        self.head = conv3x3(1, width)
        self.body = nn.Sequential(
            ResidualBlock(width), AttentionBlock(width), ResidualBlock(width)
        )
        self.tail = conv3x3(width, 3)

    def forward(self, depth: torch.Tensor) -> torch.Tensor:
        check_divisible(depth, 16, "depth")
        return torch.sigmoid(self.tail(self.body(self.head(depth))))


class ExtractionLayer(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int = 1) -> None:
        super().__init__()
        self.conv = conv3x3(in_channels, out_channels, stride)
        self.res = ResidualBlock(out_channels)
        self.attn = AttentionBlock(out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.attn(self.res(self.conv(x)))


class FusionLayer(nn.Module):
    def __init__(self, in_channels: int, out_channels: int) -> None:
        super().__init__()
        self.conv = conv3x3(in_channels, out_channels)
        self.res = ResidualBlock(out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.res(self.conv(x))


class FeatureGeneration(nn.Module):
    def __init__(self, in_channels: int, channels: int) -> None:
        super().__init__()
        self.el1 = ExtractionLayer(in_channels, channels)
        self.el2 = ExtractionLayer(channels, channels, stride=2)
        self.el3 = ExtractionLayer(channels, channels, stride=2)

    def forward(self, x: torch.Tensor):
        check_divisible(x, 16, "prediction")
        c1 = self.el1(x)
        c2 = self.el2(c1)
        c3 = self.el3(c2)
        return c1, c2, c3


class FeatureFusion(nn.Module):
    def __init__(self, channels: int, hyper_channels: int) -> None:
        super().__init__()
        self.down1 = conv3x3(channels, channels, stride=2)
        self.fuse1 = FusionLayer(2 * channels, channels)
        self.down2 = conv3x3(channels, channels, stride=2)
        self.fuse2 = FusionLayer(2 * channels, channels)
        self.out = nn.Sequential(
            conv3x3(channels, hyper_channels, stride=2),
            nn.GELU(),
            conv3x3(hyper_channels, hyper_channels, stride=2),
        )

    def forward(self, c1: torch.Tensor, c2: torch.Tensor, c3: torch.Tensor) -> torch.Tensor:
        check_divisible(c1, 16, "c1")
        height, width = c1.shape[-2:]
        check_spatial(c2, (height // 2, width // 2), "c2")
        check_spatial(c3, (height // 4, width // 4), "c3")
        x = self.fuse1(torch.cat([self.down1(c1), c2], dim=1))
        x = self.fuse2(torch.cat([self.down2(x), c3], dim=1))
        return self.out(x)


class ContextNet(nn.Module):
    """PIP followed by FG and FF.

    ``use_pip=False`` feeds the depth raster straight into FG (one input
    channel). ``use_ff=False`` drops the fusion branch and ``c_hyper``.
    """

    def __init__(
        self,
        cfg: ContextNetConfig,
        *,
        use_pip: bool = True,
        use_ff: bool = True,
    ) -> None:
        super().__init__()
        self.cfg = cfg
        self.use_pip = use_pip
        self.use_ff = use_ff
        self.pip = PointToImagePrediction(cfg.pip_width) if use_pip else None
        self.fg = FeatureGeneration(3 if use_pip else 1, cfg.c_channels)
        self.ff = FeatureFusion(cfg.c_channels, cfg.c_hyper_channels) if use_ff else None

    def forward(self, depth: torch.Tensor, zeros: bool = False):
        """Return ``(c_pre, context)``; ``c_pre`` is None without PIP."""

        check_divisible(depth, 16, "depth")
        if zeros:
            depth = torch.zeros_like(depth)
        c_pre = self.pip(depth) if self.pip is not None else None
        return c_pre, self.mine(c_pre if c_pre is not None else depth)

    def mine(self, features: torch.Tensor) -> MultiScaleContext:
        c1, c2, c3 = self.fg(features)
        c_hyper = self.ff(c1, c2, c3) if self.ff is not None else None
        return MultiScaleContext(c1=c1, c2=c2, c3=c3, c_hyper=c_hyper)


def pip_forward(depth: Union[EqualizedDepthMap, torch.Tensor], net: PointToImagePrediction) -> torch.Tensor:
    tensor = depth_to_tensor(depth) if isinstance(depth, EqualizedDepthMap) else depth
    return net(tensor)


def feature_generation(pred: torch.Tensor, net: FeatureGeneration):
    return net(pred)


def feature_fusion(
    c1: torch.Tensor, c2: torch.Tensor, c3: torch.Tensor, net: FeatureFusion
) -> torch.Tensor:
    return net(c1, c2, c3)


def assemble_context(
    depth: Union[EqualizedDepthMap, torch.Tensor], net: ContextNet, *, zeros: bool = False
) -> MultiScaleContext:
    tensor = depth_to_tensor(depth) if isinstance(depth, EqualizedDepthMap) else depth
    return net(tensor, zeros=zeros)[1]


def draw_color_transform(generator: torch.Generator) -> ColorTransform:
    draws = torch.rand(3, generator=generator, dtype=torch.float64)
    return ColorTransform(
        contrast=0.5 + float(draws[0]),
        brightness=0.5 * float(draws[1]) - 0.25,
        invert=bool(draws[2] < 0.5),
    )


def apply_color_transform(image: torch.Tensor, params: ColorTransform) -> torch.Tensor:
    """Contrast about the per-channel mean, then brightness, then optional inversion."""

    mean = image.mean(dim=(-2, -1), keepdim=True)
    out = (image - mean) * params.contrast + mean + params.brightness
    if params.invert:
        out = 1.0 - out
    return out.clamp(0.0, 1.0)


def random_color_transform(image: torch.Tensor, seed: int) -> torch.Tensor:
    """One independent draw per image of a batch; a 3xHxW input takes a single draw."""

    generator = torch.Generator().manual_seed(int(seed))
    if image.dim() == 3:
        return apply_color_transform(image, draw_color_transform(generator))
    return torch.stack(
        [apply_color_transform(sample, draw_color_transform(generator)) for sample in image]
    )


def prediction_loss(pred: torch.Tensor, image: torch.Tensor, seed: int) -> torch.Tensor:
    if pred.shape != image.shape:
        raise ShapeError(
            f"prediction {tuple(pred.shape)} and image {tuple(image.shape)} differ"
        )
    return F.mse_loss(pred, random_color_transform(image, seed))


def context_fingerprint(ctx: MultiScaleContext) -> str:
    digest = hashlib.sha1()
    for tensor in ctx.tensors():
        if tensor is None:
            digest.update(b"none")
            continue
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


__all__ = [
    "ColorTransform",
    "ContextNet",
    "ExtractionLayer",
    "FeatureFusion",
    "FeatureGeneration",
    "FusionLayer",
    "MultiScaleContext",
    "PointToImagePrediction",
    "ShapeError",
    "apply_color_transform",
    "assemble_context",
    "context_fingerprint",
    "depth_to_tensor",
    "draw_color_transform",
    "feature_fusion",
    "feature_generation",
    "pip_forward",
    "prediction_loss",
    "random_color_transform",
]
