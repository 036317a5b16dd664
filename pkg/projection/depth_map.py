"""LiDAR-to-camera projection, depth equalization and the stored P5 depth maps."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
from PIL import Image

from config.config import ProjectionConfig
from dataset.ingest import (
    CalibrationSet,
    DatasetManifest,
    LidarScan,
    Roi,
    ScenePair,
    crop_array,
    load_scene_pair,
)
from utils.observability import observe_operation

logger = logging.getLogger(__name__)

MAX_BIN = 254
LEVELS = 255


@dataclass(frozen=True)
class SparseDepthMap:
    """Forward depth in metres (0 where empty) plus the occupancy mask."""

    depth: np.ndarray
    occupancy: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.depth.shape


@dataclass(frozen=True)
class EqualizedDepthMap:
    """uint8 levels: 0 marks empty pixels, occupied pixels hold 1..255."""

    values: np.ndarray
    occupancy: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @classmethod
    def zeros(cls, height: int, width: int) -> "EqualizedDepthMap":
        return cls(
            values=np.zeros((height, width), dtype=np.uint8),
            occupancy=np.zeros((height, width), dtype=bool),
        )

    @classmethod
    def from_values(cls, values: np.ndarray) -> "EqualizedDepthMap":
        values = np.asarray(values, dtype=np.uint8)
        return cls(values=values, occupancy=values > 0)


def _round_half_away(values: np.ndarray) -> np.ndarray:
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def assemble_lidar_to_camera(calib: CalibrationSet) -> np.ndarray:
    """4x4 homogeneous transform [R | t; 0 0 0 1]."""

    transform = np.eye(4, dtype=np.float64)
    transform[:3, :3] = calib.r_lidar_to_cam
    transform[:3, 3] = calib.t_lidar_to_cam
    return transform


def _rectified_camera_points(scan: LidarScan, calib: CalibrationSet) -> np.ndarray:
    homogeneous = np.ones((len(scan), 4), dtype=np.float64)
    homogeneous[:, :3] = scan.xyz.astype(np.float64)
    rect = np.eye(4, dtype=np.float64)
    rect[:3, :3] = calib.r_rect
    return rect @ assemble_lidar_to_camera(calib) @ homogeneous.T


def project_scan(
    scan: LidarScan, calib: CalibrationSet, cfg: ProjectionConfig
) -> SparseDepthMap:
    """Rasterise a scan into the rectified image plane; the nearest point wins a pixel."""

    depth = np.full((cfg.height, cfg.width), np.inf, dtype=np.float64)
    if len(scan):
        camera = _rectified_camera_points(scan, calib)
        image = calib.p_rect @ camera
        forward = camera[2]
        divisor = image[2]
        keep = (forward > 0) & (divisor > 0)
        u = _round_half_away(image[0, keep] / divisor[keep])
        v = _round_half_away(image[1, keep] / divisor[keep])
        forward = forward[keep]
        inside = (
            np.isfinite(u)
            & np.isfinite(v)
            & (u >= 0)
            & (u < cfg.width)
            & (v >= 0)
            & (v < cfg.height)
        )
        rows = v[inside].astype(np.int64)
        cols = u[inside].astype(np.int64)
        np.minimum.at(depth, (rows, cols), forward[inside])

    occupancy = np.isfinite(depth)
    depth[~occupancy] = 0.0
    return SparseDepthMap(depth=depth, occupancy=occupancy)


def crop_depth(depth_map: SparseDepthMap, roi: Roi) -> SparseDepthMap:
    return SparseDepthMap(
        depth=crop_array(depth_map.depth, roi, "depth map"),
        occupancy=crop_array(depth_map.occupancy, roi, "occupancy map"),
    )


def normalize_equalize(
    depth_map: SparseDepthMap, cfg: ProjectionConfig
) -> EqualizedDepthMap:
    """Min-subtract, scale by ``cfg.s`` into 255 bins, then equalize over occupied pixels."""

    occupancy = depth_map.occupancy.copy()
    values = np.zeros(occupancy.shape, dtype=np.uint8)
    count = int(occupancy.sum())
    if count == 0:
        return EqualizedDepthMap(values=values, occupancy=occupancy)

    depths = depth_map.depth[occupancy]
    bins = np.floor((depths - depths.min()) * cfg.s + 0.5)
    bins = np.clip(bins, 0, MAX_BIN).astype(np.int64)

    cdf = np.cumsum(np.bincount(bins, minlength=MAX_BIN + 1))
    cdf_min = int(cdf[bins.min()])
    if count == cdf_min:
        lut = np.full(MAX_BIN + 1, LEVELS, dtype=np.int64)
    else:
        scaled = (cdf - cdf_min) / float(count - cdf_min) * (LEVELS - 1)
        lut = np.floor(scaled + 0.5).astype(np.int64) + 1
    values[occupancy] = np.clip(lut[bins], 1, LEVELS).astype(np.uint8)
    return EqualizedDepthMap(values=values, occupancy=occupancy)


def degrade_scan(scan: LidarScan, voxel: float) -> LidarScan:
    """Snap points to voxel centres, merging points that share a voxel."""

    if voxel <= 0:
        raise ValueError("voxel edge length must be > 0")
    if len(scan) == 0:
        return LidarScan(scan.points.copy())

    cells = np.floor(scan.xyz.astype(np.float64) / voxel).astype(np.int64)
    unique_cells, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse)
    reflectance = (
        np.bincount(inverse, weights=scan.reflectance.astype(np.float64)) / counts
    )
    points = np.empty((unique_cells.shape[0], 4), dtype=np.float64)
    points[:, :3] = (unique_cells + 0.5) * voxel
    points[:, 3] = reflectance
    return LidarScan(points.astype(np.float32))


def write_depth_pgm(depth_map: EqualizedDepthMap, path: Union[str, Path]) -> Path:
    """Binary 8-bit P5 file; 0 marks empty pixels."""

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    raster = np.ascontiguousarray(depth_map.values, dtype=np.uint8)
    Image.fromarray(raster).save(target, format="PPM")
    return target


def read_depth_pgm(path: Union[str, Path]) -> EqualizedDepthMap:
    source = Path(path)
    if not source.is_file():
        raise FileNotFoundError(f"depth map {source} does not exist")
    with Image.open(source) as handle:
        if handle.mode != "L":
            raise ValueError(f"{source} is not an 8-bit single-channel map")
        values = np.asarray(handle, dtype=np.uint8).copy()
    return EqualizedDepthMap.from_values(values)


def frame_depth(
    pair: ScenePair,
    cfg: ProjectionConfig,
    roi: Optional[Roi] = None,
    degrade_voxel: Optional[float] = None,
) -> EqualizedDepthMap:
    """Equalized depth of one frame at its image size, restricted to ``roi`` before equalizing."""

    height, width = pair.image.shape[:2]
    frame_cfg = dataclasses.replace(cfg, width=width, height=height)
    scan = pair.scan if degrade_voxel is None else degrade_scan(pair.scan, degrade_voxel)
    sparse = project_scan(scan, pair.calib, frame_cfg)
    if roi is not None:
        sparse = crop_depth(sparse, roi)
    return normalize_equalize(sparse, frame_cfg)


def project_manifest(
    manifest: DatasetManifest,
    cfg: ProjectionConfig,
    out_dir: Union[str, Path],
    *,
    degrade_voxel: Optional[float] = None,
) -> DatasetManifest:
    """Write one PGM per frame and return the manifest pointing at them."""

    out_dir = Path(out_dir)
    depth_paths: Dict[str, str] = {}
    with observe_operation(
        "project_manifest", {"split": manifest.split, "frames": len(manifest)}
    ):
        for entry in manifest.records:
            pair = load_scene_pair(entry, manifest.camera_index)
            depth = frame_depth(pair, cfg, manifest.roi, degrade_voxel)
            stem = entry.frame_id.split("/")[-1]
            target = write_depth_pgm(depth, out_dir / entry.scene_id / f"{stem}.pgm")
            depth_paths[entry.frame_id] = str(target)
            logger.debug(
                "Projected %s: %d occupied pixels", entry.frame_id, int(depth.occupancy.sum())
            )
    logger.info("Projected %d frames of split %s into %s", len(depth_paths), manifest.split, out_dir)
    return manifest.with_depth_paths(depth_paths)


__all__ = [
    "EqualizedDepthMap",
    "SparseDepthMap",
    "assemble_lidar_to_camera",
    "crop_depth",
    "degrade_scan",
    "frame_depth",
    "normalize_equalize",
    "project_manifest",
    "project_scan",
    "read_depth_pgm",
    "write_depth_pgm",
]
