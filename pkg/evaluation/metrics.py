"""PSNR, bits per pixel, rate-distortion curves and the Bjontegaard delta rate."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
import torch
from scipy.interpolate import PchipInterpolator

from coding.bitstream import Bitstream


class NoOverlap(ValueError):
    """Two curves share no PSNR interval to integrate over."""


class CurveNotMonotone(ValueError):
    """Curve points are not strictly increasing in bpp."""


@dataclass(frozen=True)
class RdPoint:
    bpp: float
    psnr: float


@dataclass
class RdCurve:
    label: str
    points: List[RdPoint] = field(default_factory=list)

    def validate(self) -> None:
        rates = [point.bpp for point in self.points]
        if any(rate <= 0 for rate in rates):
            raise ValueError(f"curve {self.label}: bpp must be > 0")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise CurveNotMonotone(f"curve {self.label}: bpp is not strictly increasing")

    def sorted(self) -> "RdCurve":
        return RdCurve(self.label, sorted(self.points, key=lambda point: point.bpp))

    @property
    def rates(self) -> np.ndarray:
        return np.array([point.bpp for point in self.points], dtype=np.float64)

    @property
    def qualities(self) -> np.ndarray:
        return np.array([point.psnr for point in self.points], dtype=np.float64)


def psnr(x: Union[np.ndarray, torch.Tensor], x_hat: Union[np.ndarray, torch.Tensor]) -> float:
    """10 log10(1 / MSE) on [0, 1] data; ``math.inf`` for identical inputs."""

    a = x.detach().double().cpu().numpy() if isinstance(x, torch.Tensor) else np.asarray(x, dtype=np.float64)
    b = (
        x_hat.detach().double().cpu().numpy()
        if isinstance(x_hat, torch.Tensor)
        else np.asarray(x_hat, dtype=np.float64)
    )
    if a.shape != b.shape:
        raise ValueError(f"shapes {a.shape} and {b.shape} differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def bpp(stream: Union[Bitstream, bytes, int], height: int, width: int) -> float:
    """8 * total bytes (header included) over the original pixel count."""

    if isinstance(stream, Bitstream):
        size = stream.total_bytes
    elif isinstance(stream, (bytes, bytearray)):
        size = len(stream)
    else:
        size = int(stream)
    return 8.0 * size / float(height * width)


def _fit(quality: np.ndarray, log_rate: np.ndarray):
    order = np.argsort(quality, kind="stable")
    quality, log_rate = quality[order], log_rate[order]
    count = quality.size
    if count < 2:
        raise ValueError("BD-Rate needs at least 2 points per curve")
    if count > 4:
        if np.any(np.diff(quality) <= 0):
            raise CurveNotMonotone("PSNR values must be distinct for a piecewise fit")
        interpolator = PchipInterpolator(quality, log_rate)
        return lambda low, high: float(interpolator.integrate(low, high))
    degree = 3 if count == 4 else count - 1
    antiderivative = np.polyint(np.polyfit(quality, log_rate, degree))
    return lambda low, high: float(
        np.polyval(antiderivative, high) - np.polyval(antiderivative, low)
    )


def overlap(test: RdCurve, anchor: RdCurve) -> Tuple[float, float]:
    low = max(test.qualities.min(), anchor.qualities.min())
    high = min(test.qualities.max(), anchor.qualities.max())
    if not high > low:
        raise NoOverlap(
            f"PSNR ranges of {test.label} and {anchor.label} do not overlap"
        )
    return float(low), float(high)


def _finite(curve: RdCurve) -> RdCurve:
    return RdCurve(curve.label, [p for p in curve.points if math.isfinite(p.psnr)])


def bd_rate(test: RdCurve, anchor: RdCurve) -> float:
    """Average rate difference in percent at equal PSNR; negative favours ``test``."""

    test, anchor = _finite(test), _finite(anchor)
    if min(len(test.points), len(anchor.points)) < 2:
        raise ValueError("BD-Rate needs at least 2 points per curve")
    test.validate()
    anchor.validate()
    low, high = overlap(test, anchor)
    integrate_test = _fit(test.qualities, np.log10(test.rates))
    integrate_anchor = _fit(anchor.qualities, np.log10(anchor.rates))
    average = (integrate_test(low, high) - integrate_anchor(low, high)) / (high - low)
    return (10.0 ** average - 1.0) * 100.0


def curves_to_dict(curves: Iterable[RdCurve]) -> dict:
    return {
        "curves": [
            {
                "label": curve.label,
                "points": [{"bpp": point.bpp, "psnr": point.psnr} for point in curve.points],
            }
            for curve in curves
        ]
    }


def save_curves(curves: Sequence[RdCurve], path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(curves_to_dict(curves), indent=2) + "\n", encoding="utf-8")
    return target


def load_curves(path: Union[str, Path]) -> List[RdCurve]:
    source = Path(path)
    if not source.is_file():
        raise FileNotFoundError(f"curve file {source} does not exist")
    data = json.loads(source.read_text(encoding="utf-8"))
    try:
        return [
            RdCurve(
                label=str(item["label"]),
                points=[RdPoint(float(p["bpp"]), float(p["psnr"])) for p in item["points"]],
            )
            for item in data["curves"]
        ]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{source} is not a curve file: {exc}") from exc


__all__ = [
    "CurveNotMonotone",
    "NoOverlap",
    "RdCurve",
    "RdPoint",
    "bd_rate",
    "bpp",
    "curves_to_dict",
    "load_curves",
    "overlap",
    "psnr",
    "save_curves",
]
