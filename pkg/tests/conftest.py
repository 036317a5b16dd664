"""Test configuration helpers and shared fixtures."""

from __future__ import annotations

import os
import sys
from pathlib import Path
from typing import Any, Dict

import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

os.environ.setdefault("SETTINGS_SKIP_DOTENV", "1")

import torch  # noqa: E402

torch.use_deterministic_algorithms(True, warn_only=True)
torch.set_num_threads(1)

FIXTURE_HEIGHT = 160
FIXTURE_WIDTH = 192
ROI_HEIGHT = 128
PATCH = 64


def tiny_config_dict(dataset_root: Path, output_root: Path) -> Dict[str, Any]:
    """Smallest configuration that still exercises every branch of the model."""

    from dataset.fixture import default_split_spec

    return {
        "seed": 0,
        "dataset": {
            "root": str(dataset_root),
            "camera_index": 2,
            "roi_height": ROI_HEIGHT,
            "split_spec": default_split_spec(4),
        },
        "projection": {"s": 3.0, "width": FIXTURE_WIDTH, "height": FIXTURE_HEIGHT},
        "context": {"c_channels": 4, "c_hyper_channels": 8, "pip_width": 4},
        "codec": {"n_channels": 8, "m_channels": 8},
        "train": {
            "lambda": 0.016,
            "total_steps": 4,
            "batch_size": 2,
            "patch": PATCH,
            "checkpoint_every": 2,
        },
        "output": {"root": str(output_root)},
    }


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory) -> Path:
    """Synthetic KITTI-layout dataset: four scenes of two frames."""

    from dataset.fixture import generate_fixture

    root = tmp_path_factory.mktemp("fixture")
    generate_fixture(
        root, scenes=4, frames_per_scene=2, height=FIXTURE_HEIGHT, width=FIXTURE_WIDTH, seed=0
    )
    return root


@pytest.fixture(scope="session")
def tiny_config(fixture_root, tmp_path_factory):
    from config.config import global_config_from_dict

    output = tmp_path_factory.mktemp("runs")
    return global_config_from_dict(tiny_config_dict(fixture_root, output))


@pytest.fixture(scope="session")
def projected_manifests(tiny_config):
    """Train/val/test manifests with equalized depth maps written under the run root."""

    from dataset.ingest import build_manifest
    from projection.depth_map import project_manifest

    manifests = build_manifest(
        tiny_config.dataset.root,
        tiny_config.dataset.split_spec,
        camera_index=tiny_config.dataset.camera_index,
        roi_height=tiny_config.dataset.roi_height,
    )
    return {
        split: project_manifest(
            manifest, tiny_config.projection, tiny_config.output.depth_dir / split
        )
        for split, manifest in manifests.items()
    }


@pytest.fixture
def tiny_model(tiny_config):
    from models.factory import create_model

    model = create_model(tiny_config, seed=0)
    model.eval()
    return model


@pytest.fixture(scope="session")
def trained_checkpoint(tiny_config, projected_manifests, tmp_path_factory) -> Path:
    """A checkpoint of the full model after a handful of optimisation steps."""

    from logs import MetricsLogManager
    from training.trainer import Trainer

    root = tmp_path_factory.mktemp("trained")
    trainer = Trainer(
        tiny_config,
        projected_manifests,
        metrics_log=MetricsLogManager(root / "metrics"),
        checkpoint_dir=root / "checkpoints",
    )
    result = trainer.run()
    return result.checkpoints[-1]


@pytest.fixture(scope="session")
def tiny_config_data():
    """Factory for the tiny configuration mapping, for tests that write config files."""

    return tiny_config_dict
