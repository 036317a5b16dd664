"""Frame-level compress / decompress on the synthetic fixture."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest
import torch

from coding.bitstream import HEADER_BYTES, Bitstream
from coding.pipeline import (
    MissingContext,
    ModelMismatch,
    compress,
    decompress,
    image_to_tensor,
    pad_depth,
    pad_image,
    padded_size,
    tensor_to_image,
)
from dataset.ingest import crop_roi, load_scene_pair
from models.checkpoint import load_checkpoint
from models.codec import FLAG_CONDITIONAL, FLAG_ZEROS
from models.factory import create_model
from projection.depth_map import read_depth_pgm


@pytest.fixture(scope="module")
def test_frame(projected_manifests):
    manifest = projected_manifests["test"]
    entry = manifest.records[0]
    pair = crop_roi(load_scene_pair(entry, manifest.camera_index), manifest.roi)
    return pair.image, read_depth_pgm(entry.depth_path)


def test_padding_helpers():
    image = torch.arange(2 * 3 * 5 * 7, dtype=torch.float32).reshape(2, 3, 5, 7)

    assert padded_size(375, 1242) == (384, 1280)
    assert padded_size(64, 128) == (64, 128)
    padded = pad_image(torch.rand(1, 3, 100, 130))
    assert padded.shape == (1, 3, 128, 192)
    assert pad_image(image).shape == (2, 3, 64, 64)
    depth = pad_depth(torch.ones(1, 1, 10, 20))
    assert depth.shape == (1, 1, 64, 64)
    assert depth[..., 10:, :].sum() == 0


def test_image_tensor_conversions():
    rgb = np.random.default_rng(0).random((8, 6, 3)).astype(np.float32)

    tensor = image_to_tensor(rgb)
    back = tensor_to_image(tensor)

    assert tensor.shape == (1, 3, 8, 6)
    assert back.shape == (8, 6, 3) and back.dtype == np.uint8
    np.testing.assert_array_equal(back, np.round(rgb * 255).astype(np.uint8))


def test_file_roundtrip_is_bit_exact(tmp_path, tiny_model, test_frame):
    image, depth = test_frame

    result = compress(image, depth, tiny_model)
    path = result.bitstream.write(tmp_path / "frame.pcic")
    decoded = decompress(Bitstream.read(path), depth, tiny_model)

    height, width = image.shape[:2]
    assert result.bitstream.height == height and result.bitstream.width == width
    assert decoded.shape == (1, 3, height, width)
    assert torch.equal(decoded, result.reconstruction)
    assert result.bitstream.flags & FLAG_CONDITIONAL
    assert path.stat().st_size == result.bitstream.total_bytes


def test_non_multiple_frame_is_padded_and_cropped(tiny_model):
    rng = np.random.default_rng(1)
    image = rng.random((70, 90, 3), dtype=np.float32)
    depth = torch.from_numpy(rng.integers(0, 256, size=(1, 1, 70, 90)).astype(np.float32) / 255.0)

    result = compress(image, depth, tiny_model)
    decoded = decompress(result.bitstream, depth, tiny_model)

    assert decoded.shape == (1, 3, 70, 90)
    assert torch.equal(decoded, result.reconstruction)


def test_zeros_mode_roundtrip_ignores_decoder_depth(tiny_model, test_frame):
    image, depth = test_frame

    result = compress(image, depth, tiny_model, zeros=True)
    decoded = decompress(result.bitstream, depth, tiny_model)
    without_depth = decompress(result.bitstream, None, tiny_model)

    assert result.bitstream.flags & FLAG_ZEROS
    assert torch.equal(decoded, result.reconstruction)
    assert torch.equal(without_depth, result.reconstruction)


def test_unconditional_model_roundtrip(tiny_config, test_frame):
    model = create_model(tiny_config, "baseline", seed=0).eval()
    image, _ = test_frame

    result = compress(image, None, model)
    decoded = decompress(result.bitstream, None, model)

    assert result.bitstream.flags == 0
    assert result.fingerprint is None
    assert torch.equal(decoded, result.reconstruction)


def test_header_mismatch_is_reported(tiny_config, tiny_model, test_frame):
    image, depth = test_frame
    stream = compress(image, depth, tiny_model).bitstream
    baseline = create_model(tiny_config, "baseline", seed=0)

    with pytest.raises(ModelMismatch, match="flags"):
        decompress(stream, depth, baseline)
    with pytest.raises(ModelMismatch, match="lambda_index"):
        decompress(dataclasses.replace(stream, lambda_index=3), depth, tiny_model)


def test_depth_coded_stream_cannot_decode_without_depth(tiny_model, test_frame):
    image, depth = test_frame
    stream = compress(image, depth, tiny_model).bitstream

    assert not stream.flags & FLAG_ZEROS
    with pytest.raises(MissingContext, match="depth"):
        decompress(Bitstream.from_bytes(stream.to_bytes()), None, tiny_model)


def test_empty_frame_is_header_only(tiny_model):
    result = compress(np.zeros((0, 0, 3), dtype=np.float32), None, tiny_model)

    assert len(result.bitstream.to_bytes()) == HEADER_BYTES
    assert decompress(result.bitstream, None, tiny_model).shape == (1, 3, 0, 0)


def test_depth_size_must_match_image(tiny_model):
    with pytest.raises(ValueError, match="does not match image"):
        compress(np.zeros((64, 64, 3), dtype=np.float32), torch.zeros(1, 1, 32, 64), tiny_model)


def test_trained_checkpoint_streams_match_evaluation_accounting(trained_checkpoint, test_frame):
    model = load_checkpoint(trained_checkpoint).build_model()
    image, depth = test_frame

    result = compress(image, depth, model)
    decoded = decompress(Bitstream.from_bytes(result.bitstream.to_bytes()), depth, model)

    height, width = image.shape[:2]
    bpp = result.bitstream.total_bits / (height * width)
    assert bpp == pytest.approx(8 * len(result.bitstream.to_bytes()) / (height * width))
    assert torch.equal(decoded, result.reconstruction)
