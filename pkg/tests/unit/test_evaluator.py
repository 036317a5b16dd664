"""Stream-based evaluation of a trained checkpoint."""

import dataclasses
import math

import pytest

from evaluation import evaluator as evaluator_module
from evaluation.evaluator import DecoderMismatch, Evaluator, evaluate_model
from logs.frame_record_log import FrameRecordLog
from models.checkpoint import load_checkpoint
from models.factory import create_model


@pytest.fixture(scope="module")
def trained_model(trained_checkpoint):
    return load_checkpoint(trained_checkpoint).build_model()


def test_records_account_for_every_frame(tiny_config, projected_manifests, trained_model, tmp_path):
    manifest = projected_manifests["test"]
    log = FrameRecordLog(tmp_path / "records.jsonl")

    evaluation = evaluate_model(
        trained_model, manifest, tiny_config.projection, label="full", record_log=log
    )

    assert [r.frame_id for r in evaluation.records] == [e.frame_id for e in manifest.records]
    for record in evaluation.records:
        assert record.bpp == 8 * record.stream_bytes / (128 * 192)
        assert record.label == "full" and not record.zeros
        assert math.isfinite(record.psnr) and not record.lossless
    assert evaluation.point.bpp == pytest.approx(
        sum(r.bpp for r in evaluation.records) / len(evaluation.records)
    )
    assert log.load_entries() == evaluation.records


def test_zero_depth_and_degraded_depth_runs(tiny_config, projected_manifests, trained_model):
    manifest = projected_manifests["test"]

    zeros = evaluate_model(trained_model, manifest, tiny_config.projection, zeros=True)
    degraded = evaluate_model(trained_model, manifest, tiny_config.projection, degrade_voxel=0.5)

    assert all(record.zeros for record in zeros.records)
    assert all(record.degrade_voxel == 0.5 for record in degraded.records)
    assert math.isfinite(zeros.point.psnr) and math.isfinite(degraded.point.psnr)


def test_unconditional_model_needs_no_depth(tiny_config, projected_manifests):
    manifest = projected_manifests["test"]
    stripped = dataclasses.replace(
        manifest,
        records=tuple(dataclasses.replace(entry, depth_path=None) for entry in manifest.records),
    )
    model = create_model(tiny_config, "baseline", seed=0)

    evaluation = evaluate_model(model, stripped, tiny_config.projection, label="baseline")

    assert len(evaluation.records) == len(manifest)


def test_checkpoint_curve(tiny_config, projected_manifests, trained_checkpoint):
    evaluator = Evaluator(projected_manifests["test"], tiny_config.projection)

    curve = evaluator.evaluate_checkpoints([trained_checkpoint], "full")

    assert curve.label == "full" and len(curve.points) == 1
    assert curve.points[0].bpp > 0


def test_empty_manifest_is_rejected(tiny_config, projected_manifests):
    empty = dataclasses.replace(projected_manifests["test"], records=())

    with pytest.raises(ValueError, match="no frames"):
        Evaluator(empty, tiny_config.projection)


def test_decoder_drift_fails_the_frame(tiny_config, projected_manifests, trained_model, mocker):
    decode = evaluator_module.decompress
    mocker.patch.object(
        evaluator_module,
        "decompress",
        side_effect=lambda *args, **kwargs: (decode(*args, **kwargs) + 1e-3).clamp(0.0, 1.0),
    )
    evaluator = Evaluator(projected_manifests["test"], tiny_config.projection)

    with pytest.raises(DecoderMismatch, match="decoder output differs"):
        evaluator.evaluate_frame(trained_model, projected_manifests["test"].records[0], "full")
