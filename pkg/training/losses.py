"""Rate-distortion objective with the auxiliary prediction term."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import torch
import torch.nn.functional as F

from config.config import TrainConfig
from models.codec import CodecOutput, PointCloudCodec
from models.context_net import prediction_loss
from training.schedule import alpha_schedule

PIXEL_SCALE = 255.0 ** 2


class DivergenceError(RuntimeError):
    """A loss component became non-finite."""

    def __init__(self, component: str, value: float) -> None:
        super().__init__(f"non-finite {component}: {value}")
        self.component = component
        self.value = value


@dataclass(frozen=True)
class LossComponents:
    loss: float
    rate_y: float
    rate_z: float
    mse: float
    pre_loss: float
    alpha: float
    lambda_: float

    def to_log(self) -> Dict[str, float]:
        data = asdict(self)
        data["lambda"] = data.pop("lambda_")
        return data


def rate_per_pixel(bits: torch.Tensor, images: torch.Tensor) -> torch.Tensor:
    batch, _, height, width = images.shape
    return bits / float(batch * height * width)


def distortion(x_hat: torch.Tensor, images: torch.Tensor) -> torch.Tensor:
    """MSE on the 8-bit scale."""

    return PIXEL_SCALE * F.mse_loss(x_hat, images)


def _check_finite(name: str, value: torch.Tensor) -> None:
    scalar = float(value.detach())
    if not math.isfinite(scalar):
        raise DivergenceError(name, scalar)


def combine(
    output: CodecOutput,
    images: torch.Tensor,
    *,
    lambda_: float,
    alpha: float,
    pre_loss: Optional[torch.Tensor] = None,
) -> Tuple[torch.Tensor, LossComponents]:
    rate_y = rate_per_pixel(output.rate_y, images)
    rate_z = rate_per_pixel(output.rate_z, images)
    mse = distortion(output.x_hat, images)
    pre = pre_loss if pre_loss is not None else images.new_zeros(())
    loss = rate_y + rate_z + lambda_ * mse + alpha * pre
    for name, value in (("rate_y", rate_y), ("rate_z", rate_z), ("mse", mse), ("pre_loss", pre), ("loss", loss)):
        _check_finite(name, value)
    components = LossComponents(
        loss=float(loss.detach()),
        rate_y=float(rate_y.detach()),
        rate_z=float(rate_z.detach()),
        mse=float(mse.detach()),
        pre_loss=float(pre.detach()),
        alpha=float(alpha),
        lambda_=float(lambda_),
    )
    return loss, components


def total_loss(
    images: torch.Tensor,
    depths: Optional[torch.Tensor],
    model: PointCloudCodec,
    step: int,
    config: TrainConfig,
    *,
    generator: Optional[torch.Generator] = None,
    color_seed: Optional[int] = None,
    mode: str = "noise",
    lambda_: Optional[float] = None,
) -> Tuple[torch.Tensor, LossComponents]:
    """``L = R_y + R_z + lambda * MSE + alpha * L_pre`` with rates in bits per pixel."""

    output = model(
        images,
        depths,
        mode=mode,
        generator=generator,
        detach_prediction=config.pre_loss_scope == "pip",
    )
    pre = None
    if output.c_pre is not None:
        seed = color_seed if color_seed is not None else config.seed * 1_000_003 + step
        pre = prediction_loss(output.c_pre, images, seed)
    return combine(
        output,
        images,
        lambda_=config.lambda_ if lambda_ is None else lambda_,
        alpha=alpha_schedule(step, config),
        pre_loss=pre,
    )


__all__ = [
    "DivergenceError",
    "LossComponents",
    "PIXEL_SCALE",
    "combine",
    "distortion",
    "rate_per_pixel",
    "total_loss",
]
