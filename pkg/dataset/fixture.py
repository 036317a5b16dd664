"""Procedural KITTI-raw-layout fixture: box scenes on a ground plane with raycast LiDAR."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
from PIL import Image

from dataset.ingest import CAM_CALIB_NAME, VELO_CALIB_NAME

logger = logging.getLogger(__name__)

DATE = "2011_09_26"
CAMERA_HEIGHT = 1.65
MAX_RANGE = 80.0
# LiDAR x forward, y left, z up -> camera x right, y down, z forward
VELO_TO_CAM_R = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
VELO_TO_CAM_T = np.array([0.0, -0.08, -0.27])


@dataclass(frozen=True)
class _Box:
    x0: float
    x1: float
    z: float
    height: float
    color: Tuple[float, float, float]
    reflectance: float


@dataclass(frozen=True)
class FixtureSummary:
    root: Path
    split_spec: Dict[str, str]
    frames: int


def scene_name(index: int) -> str:
    return f"{DATE}_drive_{index:04d}_sync"


def default_split_spec(scenes: int = 4) -> Dict[str, str]:
    """First half train, then one validation scene, the rest test."""

    spec: Dict[str, str] = {}
    for index in range(scenes):
        if index < max(1, scenes // 2):
            split = "train"
        elif index == max(1, scenes // 2):
            split = "val"
        else:
            split = "test"
        spec[scene_name(index)] = split
    return spec


def _fmt(values: np.ndarray) -> str:
    return " ".join(f"{value:.12e}" for value in np.asarray(values).reshape(-1))


def _intrinsics(height: int, width: int) -> Tuple[float, float, float]:
    return 0.75 * width, width / 2.0, 0.45 * height


def _write_calibration(date_dir: Path, height: int, width: int) -> None:
    focal, cx, cy = _intrinsics(height, width)
    p_rect = np.array([[focal, 0.0, cx, 0.0], [0.0, focal, cy, 0.0], [0.0, 0.0, 1.0, 0.0]])
    velo_lines = [
        "calib_time: 15-Mar-2012 11:37:16",
        f"R: {_fmt(VELO_TO_CAM_R)}",
        f"T: {_fmt(VELO_TO_CAM_T)}",
        "delta_f: 0.000000e+00 0.000000e+00",
        "delta_c: 0.000000e+00 0.000000e+00",
    ]
    cam_lines = ["calib_time: 09-Jan-2012 13:57:47", "corner_dist: 9.950000e-02"]
    for camera in range(4):
        cam_lines.extend(
            [
                f"S_0{camera}: {_fmt(np.array([width, height]))}",
                f"K_0{camera}: {_fmt(p_rect[:, :3])}",
                f"D_0{camera}: {_fmt(np.zeros(5))}",
                f"R_0{camera}: {_fmt(np.eye(3))}",
                f"T_0{camera}: {_fmt(np.zeros(3))}",
                f"S_rect_0{camera}: {_fmt(np.array([width, height]))}",
                f"R_rect_0{camera}: {_fmt(np.eye(3))}",
                f"P_rect_0{camera}: {_fmt(p_rect)}",
            ]
        )
    (date_dir / VELO_CALIB_NAME).write_text("\n".join(velo_lines) + "\n", encoding="utf-8")
    (date_dir / CAM_CALIB_NAME).write_text("\n".join(cam_lines) + "\n", encoding="utf-8")


def _scene_boxes(rng: np.random.Generator) -> List[_Box]:
    boxes: List[_Box] = []
    for _ in range(int(rng.integers(3, 7))):
        centre = float(rng.uniform(-8.0, 8.0))
        half_width = float(rng.uniform(0.8, 3.0))
        boxes.append(
            _Box(
                x0=centre - half_width,
                x1=centre + half_width,
                z=float(rng.uniform(8.0, 45.0)),
                height=float(rng.uniform(1.2, 6.0)),
                color=tuple(float(c) for c in rng.uniform(0.15, 0.95, size=3)),
                reflectance=float(rng.uniform(0.3, 0.9)),
            )
        )
    return boxes


def _raycast(
    boxes: List[_Box], height: int, width: int, advance: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Forward depth and surface id per pixel (-1 sky, 0 ground, k box k-1)."""

    focal, cx, cy = _intrinsics(height, width)
    cols, rows = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    dir_x = (cols - cx) / focal
    dir_y = (rows - cy) / focal

    depth = np.full((height, width), np.inf)
    surface = np.full((height, width), -1, dtype=np.int64)

    with np.errstate(divide="ignore"):
        ground = np.where(dir_y > 0, CAMERA_HEIGHT / dir_y, np.inf)
    ground[ground > MAX_RANGE] = np.inf
    hit = np.isfinite(ground)
    depth[hit] = ground[hit]
    surface[hit] = 0

    for index, box in enumerate(boxes, start=1):
        z = box.z - advance
        if z <= 1.0:
            continue
        x = dir_x * z
        y = dir_y * z
        inside = (x >= box.x0) & (x <= box.x1) & (y >= CAMERA_HEIGHT - box.height) & (
            y <= CAMERA_HEIGHT
        )
        closer = inside & (z < depth)
        depth[closer] = z
        surface[closer] = index
    return depth, surface


def _render(
    boxes: List[_Box],
    depth: np.ndarray,
    surface: np.ndarray,
    advance: float,
    rng: np.random.Generator,
) -> np.ndarray:
    height, width = depth.shape
    focal, cx, _ = _intrinsics(height, width)
    image = np.zeros((height, width, 3))

    sky_gradient = np.linspace(0.95, 0.6, height)[:, None]
    image[..., 0] = 0.55 * sky_gradient
    image[..., 1] = 0.7 * sky_gradient
    image[..., 2] = sky_gradient

    ground = surface == 0
    _, cols = np.nonzero(ground)
    ground_depth = depth[ground]
    world_x = (cols + 0.5 - cx) / focal * ground_depth
    world_z = ground_depth + advance
    checker = (np.floor(world_x / 2.0) + np.floor(world_z / 2.0)) % 2
    shade = 0.35 + 0.15 * checker
    for channel in range(3):
        image[..., channel][ground] = shade

    for index, box in enumerate(boxes, start=1):
        mask = surface == index
        if not mask.any():
            continue
        fade = np.clip(1.0 - depth[mask] / (1.5 * MAX_RANGE), 0.3, 1.0)
        for channel in range(3):
            image[..., channel][mask] = box.color[channel] * fade

    image += rng.normal(0.0, 0.01, size=image.shape)
    return (np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _scan(
    boxes: List[_Box],
    depth: np.ndarray,
    surface: np.ndarray,
    rng: np.random.Generator,
    beam_stride: int,
    column_stride: int,
) -> np.ndarray:
    height, width = depth.shape
    focal, cx, cy = _intrinsics(height, width)
    rows = np.arange(beam_stride // 2, height, beam_stride)
    cols = np.arange(0, width, column_stride)
    grid_rows, grid_cols = np.meshgrid(rows, cols, indexing="ij")
    grid_rows = grid_rows.reshape(-1)
    grid_cols = grid_cols.reshape(-1)
    forward = depth[grid_rows, grid_cols]
    hit = np.isfinite(forward)
    grid_rows, grid_cols, forward = grid_rows[hit], grid_cols[hit], forward[hit]
    ids = surface[grid_rows, grid_cols]

    jitter = rng.uniform(0.05, 0.95, size=(2, forward.size))
    u = grid_cols + jitter[0]
    v = grid_rows + jitter[1]
    camera = np.stack(
        [(u - cx) / focal * forward, (v - cy) / focal * forward, forward], axis=1
    )
    velo = (camera - VELO_TO_CAM_T) @ VELO_TO_CAM_R

    reflectance = np.full(forward.size, 0.25)
    for index, box in enumerate(boxes, start=1):
        reflectance[ids == index] = box.reflectance

    behind = rng.uniform(-20.0, 20.0, size=(64, 3))
    behind[:, 0] = -np.abs(behind[:, 0]) - 1.0
    behind[:, 2] = rng.uniform(-1.7, 1.0, size=64)
    points = np.concatenate(
        [
            np.column_stack([velo, reflectance]),
            np.column_stack([behind, rng.uniform(0.0, 1.0, size=64)]),
        ]
    )
    return points.astype("<f4")


def generate_fixture(
    root: Union[str, Path],
    *,
    scenes: int = 4,
    frames_per_scene: int = 4,
    height: int = 288,
    width: int = 320,
    camera_index: int = 2,
    seed: int = 0,
    beam_stride: int = 3,
    column_stride: int = 2,
) -> FixtureSummary:
    """Write a deterministic synthetic dataset in the KITTI-raw directory layout."""

    root = Path(root)
    date_dir = root / DATE
    date_dir.mkdir(parents=True, exist_ok=True)
    _write_calibration(date_dir, height, width)

    frames = 0
    for scene in range(scenes):
        rng = np.random.default_rng([seed, scene])
        boxes = _scene_boxes(rng)
        drive_dir = date_dir / scene_name(scene)
        image_dir = drive_dir / f"image_0{camera_index}" / "data"
        scan_dir = drive_dir / "velodyne_points" / "data"
        image_dir.mkdir(parents=True, exist_ok=True)
        scan_dir.mkdir(parents=True, exist_ok=True)
        for frame in range(frames_per_scene):
            advance = 1.5 * frame
            depth, surface = _raycast(boxes, height, width, advance)
            image = _render(boxes, depth, surface, advance, rng)
            points = _scan(boxes, depth, surface, rng, beam_stride, column_stride)
            stem = f"{frame:010d}"
            Image.fromarray(image).save(image_dir / f"{stem}.png")
            (scan_dir / f"{stem}.bin").write_bytes(points.tobytes())
            frames += 1

    logger.info("Generated %d synthetic frames under %s", frames, root)
    return FixtureSummary(root=root, split_spec=default_split_spec(scenes), frames=frames)


__all__ = ["FixtureSummary", "default_split_spec", "generate_fixture", "scene_name"]
