"""RD-curve plots and BD-Rate tables."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import pandas as pd

try:  # pragma: no cover - import guard for environments without matplotlib
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "pcic"
    import matplotlib.pyplot as plt

    _MATPLOTLIB_IMPORT_ERROR: Optional[ImportError] = None
except ImportError as exc:  # pragma: no cover - captured for graceful error reporting
    plt = None  # type: ignore[assignment]
    _MATPLOTLIB_IMPORT_ERROR = exc

from evaluation.metrics import NoOverlap, RdCurve, bd_rate, load_curves
from utils.observability import observe_operation

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ("label", "points", "bd_rate", "delta")
CurveSource = Union[str, Path, Sequence[RdCurve]]


@dataclass(frozen=True)
class ReportPaths:
    plot_png: Path
    plot_svg: Path
    table_csv: Path


def _load_curves(source: CurveSource) -> List[RdCurve]:
    if isinstance(source, (str, Path)):
        return load_curves(source)
    return list(source)


def _format(value: Optional[float]) -> str:
    return "" if value is None else f"{value:+.2f}"


def pc_gain(conditional: RdCurve, zeros_counterpart: RdCurve) -> float:
    """BD-Rate of a conditional model against the same model fed all-zero depth."""

    return bd_rate(conditional, zeros_counterpart)


def bd_rate_table(
    curves: Sequence[RdCurve],
    anchor: Optional[str] = None,
    baselines: Optional[Mapping[str, str]] = None,
) -> pd.DataFrame:
    by_label: Dict[str, RdCurve] = {curve.label: curve for curve in curves}
    if anchor not in by_label:
        fallback = curves[0].label
        if anchor is not None:
            logger.warning("Anchor %s not among the curves; using %s", anchor, fallback)
        anchor = fallback
    reference = by_label[anchor]

    rates: Dict[str, Optional[float]] = {}
    for curve in curves:
        try:
            rates[curve.label] = 0.0 if curve.label == anchor else bd_rate(curve, reference)
        except NoOverlap as exc:
            logger.warning("No BD-Rate for %s: %s", curve.label, exc)
            rates[curve.label] = None

    rows = []
    for curve in curves:
        delta = None
        paired = (baselines or {}).get(curve.label)
        if paired is not None and paired in by_label:
            own, base = rates.get(curve.label), rates.get(paired)
            if own is not None and base is not None:
                delta = own - base
        rows.append(
            {
                "label": curve.label,
                "points": len(curve.points),
                "bd_rate": _format(rates[curve.label]),
                "delta": _format(delta),
            }
        )
    return pd.DataFrame(rows, columns=list(TABLE_COLUMNS))


def _plot(curves: Sequence[RdCurve], png: Path, svg: Path) -> None:
    if _MATPLOTLIB_IMPORT_ERROR is not None:
        raise ImportError(
            "matplotlib is required to render RD curves."
        ) from _MATPLOTLIB_IMPORT_ERROR
    figure, axis = plt.subplots(figsize=(6, 4.5))
    for curve in curves:
        ordered = curve.sorted()
        axis.plot(ordered.rates, ordered.qualities, marker="o", label=curve.label)
    axis.set_xlabel("bpp")
    axis.set_ylabel("PSNR (dB)")
    axis.grid(True, alpha=0.3)
    axis.legend(loc="lower right")
    figure.tight_layout()
    figure.savefig(png, dpi=120, metadata={"Software": None})
    figure.savefig(svg, metadata={"Date": None, "Creator": None})
    plt.close(figure)


def emit_report(
    curves: CurveSource,
    out_dir: Union[str, Path],
    anchor: Optional[str] = None,
    baselines: Optional[Mapping[str, str]] = None,
) -> ReportPaths:
    """Write ``rd_curves.png``, ``rd_curves.svg`` and ``bd_rate.csv`` under ``out_dir``."""

    loaded = _load_curves(curves)
    if not loaded:
        raise ValueError("at least one curve is required")
    target = Path(out_dir)
    target.mkdir(parents=True, exist_ok=True)
    paths = ReportPaths(
        plot_png=target / "rd_curves.png",
        plot_svg=target / "rd_curves.svg",
        table_csv=target / "bd_rate.csv",
    )
    with observe_operation("emit_report", {"curves": len(loaded)}):
        table = bd_rate_table(loaded, anchor, baselines)
        table.to_csv(paths.table_csv, index=False, lineterminator="\n")
        _plot(loaded, paths.plot_png, paths.plot_svg)
    logger.info("Report written to %s", target)
    return paths


__all__ = ["ReportPaths", "TABLE_COLUMNS", "bd_rate_table", "emit_report", "pc_gain"]
