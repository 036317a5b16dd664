"""Real-bitstream evaluation of trained models over a test manifest."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import torch

from coding.bitstream import Bitstream
from coding.pipeline import compress, decompress, image_to_tensor
from config.config import ProjectionConfig
from dataset.ingest import (
    DatasetManifest,
    ManifestEntry,
    crop_array,
    load_image,
    load_scene_pair,
)
from evaluation.metrics import RdCurve, RdPoint, bpp, psnr
from logs.frame_record_log import FrameRecord, FrameRecordLog
from models.checkpoint import load_checkpoint
from models.codec import PointCloudCodec
from projection.depth_map import EqualizedDepthMap, frame_depth, read_depth_pgm
from utils.observability import observe_operation


class DecoderMismatch(RuntimeError):
    """A decoded frame differs from the encoder-side reconstruction."""


@dataclass
class ModelEvaluation:
    point: RdPoint
    records: List[FrameRecord] = field(default_factory=list)


class Evaluator:
    """Codes every frame of a manifest through serialized streams and averages bpp / PSNR."""

    def __init__(
        self,
        manifest: DatasetManifest,
        projection: ProjectionConfig,
        *,
        zeros: bool = False,
        degrade_voxel: Optional[float] = None,
        record_log: Optional[FrameRecordLog] = None,
        logger: Optional[logging.Logger] = None,
    ) -> None:
        if not len(manifest):
            raise ValueError(f"manifest {manifest.split} has no frames")
        self.manifest = manifest
        self.projection = projection
        self.zeros = zeros
        self.degrade_voxel = degrade_voxel
        self.record_log = record_log
        self.logger = logger or logging.getLogger(self.__class__.__name__)

    def _image(self, entry: ManifestEntry) -> np.ndarray:
        image = load_image(entry.image_path)
        if self.manifest.roi is not None:
            image = crop_array(image, self.manifest.roi, f"frame {entry.frame_id}")
        return np.ascontiguousarray(image)

    def _depth(self, entry: ManifestEntry) -> Optional[EqualizedDepthMap]:
        if self.zeros:
            return None
        if self.degrade_voxel is None and entry.depth_path is not None:
            return read_depth_pgm(entry.depth_path)
        pair = load_scene_pair(entry, self.manifest.camera_index)
        return frame_depth(pair, self.projection, self.manifest.roi, self.degrade_voxel)

    def evaluate_frame(
        self, model: PointCloudCodec, entry: ManifestEntry, label: str
    ) -> FrameRecord:
        image = self._image(entry)
        depth = self._depth(entry) if model.context_net is not None else None
        height, width = image.shape[:2]
        result = compress(image, depth, model, zeros=self.zeros)
        payload = result.bitstream.to_bytes()
        decoded = decompress(Bitstream.from_bytes(payload), depth, model)
        if not torch.equal(decoded, result.reconstruction):
            raise DecoderMismatch(
                f"frame {entry.frame_id}: decoder output differs from the encoder reconstruction"
            )
        quality = psnr(image_to_tensor(image), decoded)
        return FrameRecord(
            frame_id=entry.frame_id,
            scene_id=entry.scene_id,
            label=label,
            lambda_index=model.variant.lambda_index,
            bpp=bpp(len(payload), height, width),
            psnr=quality,
            lossless=math.isinf(quality),
            stream_bytes=len(payload),
            zeros=self.zeros,
            degrade_voxel=self.degrade_voxel,
        )

    def evaluate_model(self, model: PointCloudCodec, label: str) -> ModelEvaluation:
        model.eval()
        records: List[FrameRecord] = []
        with observe_operation(
            "evaluate_model", {"label": label, "frames": len(self.manifest)}
        ):
            for entry in self.manifest.records:
                record = self.evaluate_frame(model, entry, label)
                records.append(record)
                self.logger.debug(
                    "%s %s: %.4f bpp, %.3f dB", label, entry.frame_id, record.bpp, record.psnr
                )
        if self.record_log is not None:
            self.record_log.extend(records)

        finite = [record.psnr for record in records if not record.lossless]
        if len(finite) < len(records):
            self.logger.warning(
                "%d lossless frames excluded from the PSNR mean of %s",
                len(records) - len(finite),
                label,
            )
        mean_psnr = float(np.mean(finite)) if finite else math.inf
        mean_bpp = float(np.mean([record.bpp for record in records]))
        self.logger.info("%s lambda_index %d: %.4f bpp, %.3f dB", label, model.variant.lambda_index, mean_bpp, mean_psnr)
        return ModelEvaluation(point=RdPoint(bpp=mean_bpp, psnr=mean_psnr), records=records)

    def evaluate_checkpoints(
        self, checkpoints: Sequence[Union[str, Path]], label: str
    ) -> RdCurve:
        """One point per checkpoint, ordered by bpp; raises CurveNotMonotone on ties."""

        points = []
        for path in checkpoints:
            model = load_checkpoint(path).build_model()
            points.append(self.evaluate_model(model, label).point)
        curve = RdCurve(label, points).sorted()
        curve.validate()
        return curve


def evaluate_model(
    model: PointCloudCodec,
    manifest: DatasetManifest,
    projection: ProjectionConfig,
    *,
    label: str = "model",
    zeros: bool = False,
    degrade_voxel: Optional[float] = None,
    record_log: Optional[FrameRecordLog] = None,
) -> ModelEvaluation:
    evaluator = Evaluator(
        manifest,
        projection,
        zeros=zeros,
        degrade_voxel=degrade_voxel,
        record_log=record_log,
    )
    return evaluator.evaluate_model(model, label)


__all__ = ["DecoderMismatch", "Evaluator", "ModelEvaluation", "evaluate_model"]
