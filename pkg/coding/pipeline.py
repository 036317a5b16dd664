"""Frame-level compress / decompress with padding, header checks and context symmetry."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from coding.bitstream import Bitstream, decode_bitstream, encode_bitstream
from models.codec import FLAG_ZEROS, MODEL_FLAGS_MASK, PointCloudCodec
from models.context_net import context_fingerprint, depth_to_tensor
from models.entropy import FactorizedTables, shared_gaussian_tables
from projection.depth_map import EqualizedDepthMap
from utils.observability import observe_operation, record_stream_bits

logger = logging.getLogger(__name__)

PAD_MULTIPLE = 64


class ModelMismatch(ValueError):
    """The stream header was produced by a differently configured model."""


class MissingContext(ValueError):
    """A stream coded against real depth is being decoded without the depth raster."""


@dataclass
class CompressResult:
    bitstream: Bitstream
    reconstruction: torch.Tensor
    fingerprint: Optional[str] = None


def image_to_tensor(image: Union[np.ndarray, torch.Tensor]) -> torch.Tensor:
    """H x W x 3 array or 3 x H x W / 1 x 3 x H x W tensor to a 1 x 3 x H x W float tensor."""

    if isinstance(image, np.ndarray):
        tensor = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
        tensor = tensor.permute(2, 0, 1)
    else:
        tensor = image.to(torch.float32)
    if tensor.dim() == 3:
        tensor = tensor.unsqueeze(0)
    return tensor


def tensor_to_image(tensor: torch.Tensor) -> np.ndarray:
    """1 x 3 x H x W reconstruction in [0, 1] to an H x W x 3 uint8 array."""

    values = tensor.detach().to(torch.float32).clamp(0.0, 1.0)
    if values.dim() == 4:
        values = values[0]
    return (values * 255.0).round().to(torch.uint8).permute(1, 2, 0).cpu().numpy()


def padded_size(height: int, width: int, multiple: int = PAD_MULTIPLE) -> Tuple[int, int]:
    return -(-height // multiple) * multiple, -(-width // multiple) * multiple


def pad_image(image: torch.Tensor, multiple: int = PAD_MULTIPLE) -> torch.Tensor:
    """Reflect-pad bottom/right; replicate when the frame is too small to reflect."""

    height, width = image.shape[-2:]
    target_h, target_w = padded_size(height, width, multiple)
    pad = (0, target_w - width, 0, target_h - height)
    if pad[1] == 0 and pad[3] == 0:
        return image
    mode = "reflect" if pad[1] < width and pad[3] < height else "replicate"
    return F.pad(image, pad, mode=mode)


def pad_depth(depth: torch.Tensor, multiple: int = PAD_MULTIPLE) -> torch.Tensor:
    height, width = depth.shape[-2:]
    target_h, target_w = padded_size(height, width, multiple)
    return F.pad(depth, (0, target_w - width, 0, target_h - height), value=0.0)


def _depth_input(
    model: PointCloudCodec, depth: Optional[Union[EqualizedDepthMap, torch.Tensor]], height: int, width: int
) -> Optional[torch.Tensor]:
    if model.context_net is None:
        return None
    if depth is None:
        tensor = torch.zeros(1, 1, height, width)
    elif isinstance(depth, EqualizedDepthMap):
        tensor = depth_to_tensor(depth)
    else:
        tensor = depth.to(torch.float32)
    if tuple(tensor.shape[-2:]) != (height, width):
        raise ValueError(
            f"depth map {tuple(tensor.shape[-2:])} does not match image {(height, width)}"
        )
    return pad_depth(tensor)


def _z_shape(model: PointCloudCodec, height: int, width: int) -> Tuple[int, int, int, int]:
    padded_h, padded_w = padded_size(height, width)
    return (1, model.variant.n_channels, padded_h // 64, padded_w // 64)


def compress(
    image: Union[np.ndarray, torch.Tensor],
    depth: Optional[Union[EqualizedDepthMap, torch.Tensor]],
    model: PointCloudCodec,
    *,
    zeros: bool = False,
) -> CompressResult:
    """Encode one frame. ``depth=None`` or ``zeros=True`` selects the all-zero context."""

    tensor = image_to_tensor(image)
    height, width = tensor.shape[-2:]
    variant = model.variant
    zeros = bool(zeros or depth is None or variant.zeros_input) and variant.conditional
    flags = variant.header_flags(zeros)

    with observe_operation("compress", {"height": height, "width": width, "zeros": zeros}):
        if height == 0 or width == 0:
            stream = Bitstream(flags=flags, lambda_index=variant.lambda_index, height=height, width=width)
            return CompressResult(stream, torch.zeros(1, 3, height, width))

        model.eval()
        depth_tensor = _depth_input(model, depth, height, width)
        pair, params, x_hat, ctx = model.encode(pad_image(tensor), depth_tensor, zeros=zeros)
        z_payload, y_payload = encode_bitstream(
            pair, params, FactorizedTables(model.density), shared_gaussian_tables()
        )
        stream = Bitstream(
            flags=flags,
            lambda_index=variant.lambda_index,
            height=height,
            width=width,
            z_payload=z_payload,
            y_payload=y_payload,
        )
        fingerprint = context_fingerprint(ctx) if ctx is not None else None
        if fingerprint:
            logger.debug("compress context fingerprint %s", fingerprint)
        record_stream_bits("z", 8 * len(z_payload))
        record_stream_bits("y", 8 * len(y_payload))
        record_stream_bits("header", stream.total_bits - 8 * (len(z_payload) + len(y_payload)))
    return CompressResult(stream, x_hat[..., :height, :width], fingerprint)


def check_header(stream: Bitstream, model: PointCloudCodec) -> None:
    variant = model.variant
    if stream.lambda_index != variant.lambda_index:
        raise ModelMismatch(
            f"stream lambda_index {stream.lambda_index} != model lambda_index {variant.lambda_index}"
        )
    expected = variant.header_flags() & MODEL_FLAGS_MASK
    found = stream.flags & MODEL_FLAGS_MASK
    if expected != found:
        raise ModelMismatch(
            f"stream flags 0x{found:02x} do not match model flags 0x{expected:02x} ({variant.ablation})"
        )


def decompress(
    stream: Bitstream,
    depth: Optional[Union[EqualizedDepthMap, torch.Tensor]],
    model: PointCloudCodec,
) -> torch.Tensor:
    """Decode to a 1 x 3 x H x W reconstruction in [0, 1] at the original size."""

    check_header(stream, model)
    height, width = stream.height, stream.width
    zeros = bool(stream.flags & FLAG_ZEROS)
    if model.context_net is not None and not zeros and depth is None:
        raise MissingContext(
            "stream was coded with a depth context; decoding needs the same depth raster"
        )
    with observe_operation("decompress", {"height": height, "width": width, "zeros": zeros}):
        if height == 0 or width == 0:
            return torch.zeros(1, 3, height, width)

        model.eval()
        depth_tensor = _depth_input(model, None if zeros else depth, height, width)
        with torch.no_grad():
            _, ctx = model.context(depth_tensor, zeros=zeros)
        decoded_params = {}

        def entropy_parameters(z_hat: torch.Tensor):
            with torch.no_grad():
                decoded_params["params"] = model.entropy_parameters(z_hat.to(torch.float32), ctx)
            return decoded_params["params"]

        pair = decode_bitstream(
            stream.z_payload,
            stream.y_payload,
            _z_shape(model, height, width),
            FactorizedTables(model.density),
            entropy_parameters,
            shared_gaussian_tables(),
        )
        x_hat, ctx = model.decode(pair, params=decoded_params["params"], ctx=ctx)
        if ctx is not None:
            logger.debug("decompress context fingerprint %s", context_fingerprint(ctx))
    return x_hat[..., :height, :width]


__all__ = [
    "CompressResult",
    "MissingContext",
    "ModelMismatch",
    "check_header",
    "compress",
    "decompress",
    "image_to_tensor",
    "pad_depth",
    "pad_image",
    "padded_size",
    "tensor_to_image",
]
