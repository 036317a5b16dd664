"""Convolution building blocks shared by the context network and the codec."""

from __future__ import annotations

import torch
from compressai.layers import conv1x1
from torch import nn


class ShapeError(ValueError):
    """Spatial dimensions do not satisfy a module's divisibility or scale contract."""


def check_divisible(tensor: torch.Tensor, factor: int, what: str = "input") -> None:
    if tensor.dim() != 4:
        raise ShapeError(f"{what}: expected a 4-D batch, got shape {tuple(tensor.shape)}")
    height, width = tensor.shape[-2:]
    if height % factor or width % factor:
        raise ShapeError(
            f"{what}: height and width must be divisible by {factor}, got {height}x{width}"
        )


def check_spatial(tensor: torch.Tensor, size: tuple, what: str) -> None:
    if tuple(tensor.shape[-2:]) != tuple(size):
        raise ShapeError(
            f"{what}: expected spatial size {tuple(size)}, got {tuple(tensor.shape[-2:])}"
        )


def conv3x3(in_channels: int, out_channels: int, stride: int = 1) -> nn.Conv2d:
    """3x3 convolution with replicate padding, so a constant field maps to a constant field."""

    return nn.Conv2d(
        in_channels,
        out_channels,
        kernel_size=3,
        stride=stride,
        padding=1,
        padding_mode="replicate",
    )


class ResidualBlock(nn.Module):
    """Pre-activation residual block: x + conv(gelu(conv(gelu(x))))."""

    def __init__(self, channels: int) -> None:
        super().__init__()
        self.conv1 = conv3x3(channels, channels)
        self.conv2 = conv3x3(channels, channels)
        self.act = nn.GELU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.conv1(self.act(x))
        out = self.conv2(self.act(out))
        return x + out


class AttentionBlock(nn.Module):
    """Residual trunk gated by a sigmoid mask branch."""

    def __init__(self, channels: int) -> None:
        super().__init__()
        self.trunk = nn.Sequential(ResidualBlock(channels), ResidualBlock(channels))
        self.mask = nn.Sequential(
            ResidualBlock(channels),
            ResidualBlock(channels),
            conv1x1(channels, channels),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.trunk(x) * torch.sigmoid(self.mask(x))


def zero_biases(module: nn.Module) -> nn.Module:
    """Set every convolution bias in ``module`` to zero (in place)."""

    with torch.no_grad():
        for child in module.modules():
            if isinstance(child, (nn.Conv2d, nn.ConvTranspose2d)) and child.bias is not None:
                child.bias.zero_()
    return module


__all__ = [
    "AttentionBlock",
    "ResidualBlock",
    "ShapeError",
    "check_divisible",
    "check_spatial",
    "conv3x3",
    "zero_biases",
]
