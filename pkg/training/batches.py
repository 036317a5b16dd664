"""Aligned image / depth patch sampling from a projected manifest."""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch

from dataset.ingest import DatasetManifest, ManifestEntry, crop_array, load_image
from projection.depth_map import read_depth_pgm

logger = logging.getLogger(__name__)


class SkippedFrame(ValueError):
    """A frame cannot supply a patch of the requested size."""


@dataclass(frozen=True)
class Frame:
    frame_id: str
    image: np.ndarray
    depth: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.image.shape[0], self.image.shape[1]


@dataclass
class PatchBatch:
    images: torch.Tensor
    depths: torch.Tensor
    frame_ids: List[str]
    windows: List[Tuple[int, int]]

    def __len__(self) -> int:
        return len(self.frame_ids)


def load_frame(entry: ManifestEntry, manifest: DatasetManifest) -> Frame:
    """Image cropped to the manifest ROI next to its stored equalized depth map."""

    if entry.depth_path is None:
        raise FileNotFoundError(f"frame {entry.frame_id} has no projected depth map")
    image = load_image(entry.image_path)
    if manifest.roi is not None:
        image = crop_array(image, manifest.roi, f"frame {entry.frame_id}")
    depth = read_depth_pgm(entry.depth_path).values
    if image.shape[:2] != depth.shape:
        raise ValueError(
            f"frame {entry.frame_id}: image {image.shape[:2]} and depth {depth.shape} differ"
        )
    return Frame(frame_id=entry.frame_id, image=np.ascontiguousarray(image), depth=depth)


class FrameStore:
    """Lazily loaded frames of one manifest; the ``cache_size`` most recent stay decoded."""

    def __init__(self, manifest: DatasetManifest, cache_size: int = 256) -> None:
        if cache_size < 0:
            raise ValueError("cache_size must be >= 0")
        self.manifest = manifest
        self.cache_size = int(cache_size)
        self._frames: "OrderedDict[str, Frame]" = OrderedDict()

    def __len__(self) -> int:
        return len(self.manifest.records)

    @property
    def cached(self) -> int:
        return len(self._frames)

    def get(self, index: int) -> Frame:
        entry = self.manifest.records[index]
        frame = self._frames.get(entry.frame_id)
        if frame is not None:
            self._frames.move_to_end(entry.frame_id)
            return frame
        frame = load_frame(entry, self.manifest)
        if self.cache_size:
            self._frames[entry.frame_id] = frame
            while len(self._frames) > self.cache_size:
                self._frames.popitem(last=False)
        return frame


def crop_window(frame: Frame, patch: int, rng: np.random.Generator) -> Tuple[int, int]:
    height, width = frame.shape
    if height < patch or width < patch:
        raise SkippedFrame(f"frame {frame.frame_id} ({height}x{width}) is smaller than {patch}")
    return int(rng.integers(0, height - patch + 1)), int(rng.integers(0, width - patch + 1))


def _to_tensors(frame: Frame, top: int, left: int, patch: int) -> Tuple[torch.Tensor, torch.Tensor]:
    image = frame.image[top : top + patch, left : left + patch]
    depth = frame.depth[top : top + patch, left : left + patch]
    image_t = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float32))
    depth_t = torch.from_numpy(np.ascontiguousarray(depth, dtype=np.float32) / 255.0)
    return image_t, depth_t.unsqueeze(0)


def make_patch_batch(
    store: FrameStore,
    rng: np.random.Generator,
    *,
    batch_size: int,
    patch: int,
    max_attempts: Optional[int] = None,
) -> PatchBatch:
    """Draw ``batch_size`` frames with replacement and one shared crop window per frame."""

    if len(store) == 0:
        raise ValueError("manifest has no frames")
    images, depths, frame_ids, windows = [], [], [], []
    attempts = 0
    limit = max_attempts or 4 * batch_size + len(store)
    while len(frame_ids) < batch_size:
        if attempts >= limit:
            raise ValueError(f"no frame in the manifest fits a {patch}x{patch} patch")
        attempts += 1
        frame = store.get(int(rng.integers(len(store))))
        try:
            top, left = crop_window(frame, patch, rng)
        except SkippedFrame as exc:
            logger.warning("Skipped frame: %s", exc)
            continue
        image_t, depth_t = _to_tensors(frame, top, left, patch)
        images.append(image_t)
        depths.append(depth_t)
        frame_ids.append(frame.frame_id)
        windows.append((top, left))
    return PatchBatch(
        images=torch.stack(images),
        depths=torch.stack(depths),
        frame_ids=frame_ids,
        windows=windows,
    )


def centre_patches(store: FrameStore, patch: int) -> PatchBatch:
    """One centre crop per frame that fits; frames that do not are logged and skipped."""

    images, depths, frame_ids, windows = [], [], [], []
    for index in range(len(store)):
        frame = store.get(index)
        height, width = frame.shape
        if height < patch or width < patch:
            logger.warning("Skipped frame: %s is smaller than %d", frame.frame_id, patch)
            continue
        top, left = (height - patch) // 2, (width - patch) // 2
        image_t, depth_t = _to_tensors(frame, top, left, patch)
        images.append(image_t)
        depths.append(depth_t)
        frame_ids.append(frame.frame_id)
        windows.append((top, left))
    if not frame_ids:
        raise ValueError(f"no frame in the manifest fits a {patch}x{patch} patch")
    return PatchBatch(torch.stack(images), torch.stack(depths), frame_ids, windows)


__all__ = [
    "Frame",
    "FrameStore",
    "PatchBatch",
    "SkippedFrame",
    "centre_patches",
    "crop_window",
    "load_frame",
    "make_patch_batch",
]
