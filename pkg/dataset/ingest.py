"""KITTI-raw ingestion: calibration, LiDAR scans, frames and split manifests."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

VELO_CALIB_NAME = "calib_velo_to_cam.txt"
CAM_CALIB_NAME = "calib_cam_to_cam.txt"
ROTATION_TOLERANCE = 1e-3


class MalformedCalibration(ValueError):
    """Raised when a calibration text lacks a matrix or holds the wrong number of values."""


class InvalidRotation(ValueError):
    """Raised when a calibration rotation is not orthonormal within tolerance."""


class MalformedScan(ValueError):
    """Raised when a LiDAR blob is not a whole number of finite float32 quadruples."""


class IncompleteFrame(FileNotFoundError):
    """Raised when a frame is missing one of its modalities; the message names the file."""


class RoiOutOfBounds(ValueError):
    """Raised when a crop rectangle leaves the image."""


@dataclass(frozen=True)
class CalibrationSet:
    r_lidar_to_cam: np.ndarray
    t_lidar_to_cam: np.ndarray
    r_rect: np.ndarray
    p_rect: np.ndarray

    def validate(self) -> None:
        for name in ("r_lidar_to_cam", "r_rect"):
            _check_rotation(name, getattr(self, name))
        if self.t_lidar_to_cam.shape != (3,):
            raise MalformedCalibration("t_lidar_to_cam must hold 3 values")
        if self.p_rect.shape != (3, 4):
            raise MalformedCalibration("p_rect must be 3x4")
        if self.p_rect[2, 2] == 0:
            raise MalformedCalibration("p_rect[2][2] must be non-zero")


@dataclass(frozen=True)
class LidarScan:
    """``points`` is an N x 4 float32 array of (x, y, z, reflectance)."""

    points: np.ndarray

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def reflectance(self) -> np.ndarray:
        return self.points[:, 3]


@dataclass(frozen=True)
class Roi:
    top: int
    left: int
    height: int
    width: int

    def to_dict(self) -> Dict[str, int]:
        return dataclasses.asdict(self)

    def slices(self) -> Tuple[slice, slice]:
        return slice(self.top, self.top + self.height), slice(
            self.left, self.left + self.width
        )


@dataclass(frozen=True)
class ScenePair:
    image: np.ndarray
    scan: LidarScan
    calib: CalibrationSet
    frame_id: str
    scene_id: str
    roi: Optional[Roi] = None


@dataclass(frozen=True)
class ManifestEntry:
    """File references of one frame; ``depth_path`` is filled once projected."""

    scene_id: str
    frame_id: str
    image_path: str
    scan_path: str
    velo_calib_path: str
    cam_calib_path: str
    depth_path: Optional[str] = None


@dataclass(frozen=True)
class DatasetManifest:
    split: str
    records: Tuple[ManifestEntry, ...] = ()
    roi: Optional[Roi] = None
    camera_index: int = 2

    def __len__(self) -> int:
        return len(self.records)

    @property
    def scene_ids(self) -> List[str]:
        return sorted({entry.scene_id for entry in self.records})

    def with_depth_paths(self, depth_paths: Mapping[str, str]) -> "DatasetManifest":
        records = tuple(
            dataclasses.replace(entry, depth_path=depth_paths.get(entry.frame_id))
            for entry in self.records
        )
        return dataclasses.replace(self, records=records)


# ----------------------------------------------------------------------
# Calibration
# ----------------------------------------------------------------------
def _check_rotation(name: str, matrix: np.ndarray) -> None:
    if matrix.shape != (3, 3):
        raise MalformedCalibration(f"{name} must be 3x3")
    orthogonality = np.abs(matrix.T @ matrix - np.eye(3)).max()
    determinant = abs(float(np.linalg.det(matrix)) - 1.0)
    if orthogonality >= ROTATION_TOLERANCE or determinant >= ROTATION_TOLERANCE:
        raise InvalidRotation(
            f"{name} is not a rotation (|R^T R - I| = {orthogonality:.2e}, "
            f"|det - 1| = {determinant:.2e})"
        )


def _parse_key_values(text: str) -> Dict[str, np.ndarray]:
    values: Dict[str, np.ndarray] = {}
    for line in text.splitlines():
        key, sep, rest = line.partition(":")
        if not sep:
            continue
        try:
            numbers = np.array([float(token) for token in rest.split()], dtype=np.float64)
        except ValueError:
            # calib_time and similar non-numeric entries
            continue
        values[key.strip()] = numbers
    return values


def _matrix(values: Mapping[str, np.ndarray], key: str, shape: Tuple[int, ...]) -> np.ndarray:
    if key not in values:
        raise MalformedCalibration(f"calibration key '{key}' is missing")
    data = values[key]
    expected = int(np.prod(shape))
    if data.size != expected:
        raise MalformedCalibration(
            f"calibration key '{key}' holds {data.size} values, expected {expected}"
        )
    return data.reshape(shape)


def parse_calibration(text: str, camera_index: int = 2) -> CalibrationSet:
    """Parse KITTI velo-to-cam plus cam-to-cam text (concatenated) into a CalibrationSet."""

    values = _parse_key_values(text)
    calib = CalibrationSet(
        r_lidar_to_cam=_matrix(values, "R", (3, 3)),
        t_lidar_to_cam=_matrix(values, "T", (3,)),
        r_rect=_matrix(values, "R_rect_00", (3, 3)),
        p_rect=_matrix(values, f"P_rect_0{camera_index}", (3, 4)),
    )
    calib.validate()
    return calib


def load_calibration(
    velo_path: Union[str, Path], cam_path: Union[str, Path], camera_index: int = 2
) -> CalibrationSet:
    for path in (velo_path, cam_path):
        if not Path(path).is_file():
            raise IncompleteFrame(f"missing calibration file {path}")
    text = (
        Path(velo_path).read_text(encoding="utf-8")
        + "\n"
        + Path(cam_path).read_text(encoding="utf-8")
    )
    return parse_calibration(text, camera_index)


# ----------------------------------------------------------------------
# Scans and images
# ----------------------------------------------------------------------
def load_lidar_scan(blob: bytes) -> LidarScan:
    """Decode packed little-endian float32 (x, y, z, reflectance) records."""

    if len(blob) % 16:
        raise MalformedScan(f"scan length {len(blob)} is not a multiple of 16 bytes")
    points = np.frombuffer(blob, dtype="<f4").reshape(-1, 4).astype(np.float32)
    if not np.isfinite(points).all():
        raise MalformedScan("scan contains non-finite values")
    return LidarScan(points)


def serialize_scan(scan: LidarScan) -> bytes:
    return np.ascontiguousarray(scan.points, dtype="<f4").tobytes()


def load_image(path: Union[str, Path]) -> np.ndarray:
    """8-bit PNG to an H x W x 3 float32 array in [0, 1]."""

    with Image.open(path) as handle:
        rgb = np.asarray(handle.convert("RGB"), dtype=np.float32)
    return rgb / 255.0


def default_roi(image_height: int, image_width: int, band_height: int) -> Roi:
    """Bottom band of the frame, full width."""

    if not 0 < band_height <= image_height or image_width <= 0:
        raise RoiOutOfBounds(
            f"roi band of {band_height} rows does not fit a {image_width}x{image_height} frame"
        )
    return Roi(
        top=image_height - band_height, left=0, height=band_height, width=image_width
    )


def check_roi(roi: Roi, height: int, width: int, what: str = "frame") -> None:
    if (
        roi.height <= 0
        or roi.width <= 0
        or roi.top < 0
        or roi.left < 0
        or roi.top + roi.height > height
        or roi.left + roi.width > width
    ):
        raise RoiOutOfBounds(f"roi {roi.to_dict()} exceeds {width}x{height} {what}")


def crop_array(values: np.ndarray, roi: Roi, what: str = "frame") -> np.ndarray:
    """Bounds-checked copy of the ROI rows and columns of an H x W[...] array."""

    check_roi(roi, values.shape[0], values.shape[1], what)
    rows, cols = roi.slices()
    return values[rows, cols].copy()


def crop_roi(pair: ScenePair, roi: Roi) -> ScenePair:
    image = crop_array(pair.image, roi, f"frame {pair.frame_id}")
    return dataclasses.replace(pair, image=image, roi=roi)


def load_scene_pair(entry: ManifestEntry, camera_index: int = 2) -> ScenePair:
    for path in (entry.image_path, entry.scan_path):
        if not Path(path).is_file():
            raise IncompleteFrame(f"missing file {path}")
    return ScenePair(
        image=load_image(entry.image_path),
        scan=load_lidar_scan(Path(entry.scan_path).read_bytes()),
        calib=load_calibration(
            entry.velo_calib_path, entry.cam_calib_path, camera_index
        ),
        frame_id=entry.frame_id,
        scene_id=entry.scene_id,
    )


# ----------------------------------------------------------------------
# Manifests
# ----------------------------------------------------------------------
def _scene_entries(
    drive_dir: Path, calib_dir: Path, camera_index: int
) -> List[ManifestEntry]:
    scene_id = drive_dir.name
    image_dir = drive_dir / f"image_0{camera_index}" / "data"
    scan_dir = drive_dir / "velodyne_points" / "data"
    velo_calib = calib_dir / VELO_CALIB_NAME
    cam_calib = calib_dir / CAM_CALIB_NAME
    for path in (velo_calib, cam_calib):
        if not path.is_file():
            raise IncompleteFrame(f"missing calibration file {path}")

    images = {path.stem: path for path in image_dir.glob("*.png")}
    scans = {path.stem: path for path in scan_dir.glob("*.bin")}
    entries: List[ManifestEntry] = []
    for stem in sorted(set(images) | set(scans)):
        if stem not in scans:
            raise IncompleteFrame(f"missing file {scan_dir / (stem + '.bin')}")
        if stem not in images:
            raise IncompleteFrame(f"missing file {image_dir / (stem + '.png')}")
        entries.append(
            ManifestEntry(
                scene_id=scene_id,
                frame_id=f"{scene_id}/{stem}",
                image_path=str(images[stem]),
                scan_path=str(scans[stem]),
                velo_calib_path=str(velo_calib),
                cam_calib_path=str(cam_calib),
            )
        )
    return entries


def build_manifest(
    root: Union[str, Path],
    split_spec: Mapping[str, str],
    *,
    camera_index: int = 2,
    roi_height: int = 256,
) -> Dict[str, DatasetManifest]:
    """Pair every frame under a KITTI-raw tree and group the scenes by split.

    Ordering is lexicographic by (scene_id, frame_id) whatever the directory
    listing order. Scenes absent from ``split_spec`` are skipped.
    """

    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")

    grouped: Dict[str, List[ManifestEntry]] = {}
    for calib_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for drive_dir in sorted(calib_dir.glob("*_sync")):
            scene_id = drive_dir.name
            split = split_spec.get(scene_id)
            if split is None:
                logger.info("Scene %s not in split map; skipped", scene_id)
                continue
            grouped.setdefault(split, []).extend(
                _scene_entries(drive_dir, calib_dir, camera_index)
            )

    manifests: Dict[str, DatasetManifest] = {}
    for split in sorted(set(split_spec.values())):
        entries = sorted(
            grouped.get(split, []), key=lambda item: (item.scene_id, item.frame_id)
        )
        roi = None
        for entry in entries:
            with Image.open(entry.image_path) as handle:
                width, height = handle.size
            if roi is None:
                roi = default_roi(height, width, roi_height)
            check_roi(roi, height, width, f"frame {entry.frame_id}")
        manifests[split] = DatasetManifest(
            split=split, records=tuple(entries), roi=roi, camera_index=camera_index
        )
        logger.info("Manifest %s: %d frames", split, len(entries))
    return manifests


def manifest_to_dict(manifest: DatasetManifest) -> Dict[str, Any]:
    return {
        "split": manifest.split,
        "camera_index": manifest.camera_index,
        "roi": manifest.roi.to_dict() if manifest.roi else None,
        "records": [dataclasses.asdict(entry) for entry in manifest.records],
    }


def save_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(
        json.dumps(manifest_to_dict(manifest), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return target


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    source = Path(path)
    if not source.is_file():
        raise FileNotFoundError(f"manifest {source} does not exist")
    data = json.loads(source.read_text(encoding="utf-8"))
    roi = Roi(**data["roi"]) if data.get("roi") else None
    return DatasetManifest(
        split=data["split"],
        records=tuple(ManifestEntry(**item) for item in data.get("records", [])),
        roi=roi,
        camera_index=int(data.get("camera_index", 2)),
    )


def check_split_disjointness(manifests: Mapping[str, DatasetManifest]) -> None:
    """Raise when a scene appears in more than one split."""

    seen: Dict[str, str] = {}
    for split, manifest in manifests.items():
        for scene_id in manifest.scene_ids:
            if scene_id in seen and seen[scene_id] != split:
                raise ValueError(
                    f"scene {scene_id} appears in both {seen[scene_id]} and {split}"
                )
            seen[scene_id] = split


__all__ = [
    "CalibrationSet",
    "DatasetManifest",
    "IncompleteFrame",
    "InvalidRotation",
    "LidarScan",
    "MalformedCalibration",
    "MalformedScan",
    "ManifestEntry",
    "Roi",
    "RoiOutOfBounds",
    "ScenePair",
    "build_manifest",
    "check_roi",
    "check_split_disjointness",
    "crop_array",
    "crop_roi",
    "default_roi",
    "load_calibration",
    "load_image",
    "load_lidar_scan",
    "load_manifest",
    "load_scene_pair",
    "parse_calibration",
    "save_manifest",
    "serialize_scan",
]
