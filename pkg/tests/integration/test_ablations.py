"""Every ablation trains briefly and codes a test frame bit-exactly; longer runs are opt-in."""

from __future__ import annotations

import dataclasses
import math
import warnings

import numpy as np
import pytest
import torch

from coding.bitstream import Bitstream
from coding.pipeline import compress, decompress
from dataset.ingest import crop_roi, load_scene_pair
from logs import MetricsLogManager
from models.checkpoint import load_checkpoint
from models.factory import available_ablations
from projection.depth_map import read_depth_pgm
from training.trainer import Trainer


def _config(base, ablation, steps, **train):
    train_cfg = dataclasses.replace(
        base.train, ablation=ablation, total_steps=steps, checkpoint_every=steps, **train
    )
    return dataclasses.replace(base, train=train_cfg)


def _run(config, manifests, root):
    return Trainer(
        config,
        manifests,
        metrics_log=MetricsLogManager(root / "metrics"),
        checkpoint_dir=root,
    ).run()


def _mean_loss(history, start, stop):
    return float(np.mean([components.loss for components in history[start:stop]]))


@pytest.mark.parametrize("ablation", available_ablations())
def test_ablation_trains_and_codes(ablation, tiny_config, projected_manifests, tmp_path):
    result = _run(_config(tiny_config, ablation, 50), projected_manifests, tmp_path)
    model = load_checkpoint(result.checkpoints[-1]).build_model()
    manifest = projected_manifests["test"]
    entry = manifest.records[0]
    image = crop_roi(load_scene_pair(entry, manifest.camera_index), manifest.roi).image
    depth = read_depth_pgm(entry.depth_path) if model.context_net is not None else None

    encoded = compress(image, depth, model)
    decoded = decompress(Bitstream.from_bytes(encoded.bitstream.to_bytes()), depth, model)

    assert result.checkpoints[-1].name == f"{ablation}_0.016_50.pt"
    assert all(math.isfinite(components.loss) for components in result.history)
    assert torch.equal(decoded, encoded.reconstruction)


@pytest.mark.slow
@pytest.mark.parametrize("ablation", ["full", "zeros_input"])
def test_smoke_run_lowers_training_loss(ablation, tiny_config, projected_manifests, tmp_path):
    config = _config(tiny_config, ablation, 500, batch_size=8)

    history = _run(config, projected_manifests, tmp_path).history

    assert len(history) == 500
    assert _mean_loss(history, -50, None) < _mean_loss(history, 0, 50)


@pytest.mark.slow
def test_conditional_model_against_zero_depth(tiny_config, projected_manifests, tmp_path):
    steps = 20_000
    losses = {}
    for ablation in ("full", "zeros_input"):
        config = _config(tiny_config, ablation, steps, batch_size=8)
        config = dataclasses.replace(
            config, train=dataclasses.replace(config.train, checkpoint_every=steps // 4)
        )
        losses[ablation] = _run(config, projected_manifests, tmp_path / ablation).validation[steps]

    print(f"validation loss at lambda 0.016: full {losses['full']:.6f}, zeros {losses['zeros_input']:.6f}")
    if losses["full"] > losses["zeros_input"]:
        warnings.warn(
            f"conditional model did not beat zero depth: {losses['full']:.6f} > {losses['zeros_input']:.6f}"
        )
    assert all(math.isfinite(value) for value in losses.values())
