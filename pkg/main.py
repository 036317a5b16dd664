"""Command-line entry point: fixture, project, train, compress, decompress, eval, bdrate, report."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from config import config as config_module
from config.config import GlobalConfig, Settings
from utils.observability import (
    configure_observability,
    get_current_run_id,
    pipeline_run,
    shutdown_observability,
)

SPLIT_MAP_NAME = "split_spec.json"
COMMANDS = ("fixture", "project", "train", "compress", "decompress", "eval", "bdrate", "report")

logger = logging.getLogger("pcic")


class _RunIdLoggingFilter(logging.Filter):
    def filter(self, record: logging.LogRecord) -> bool:
        if getattr(record, "run_id", None) in {None, ""}:
            record.run_id = get_current_run_id()
        return True


_run_id_filter = _RunIdLoggingFilter()
_run_id_filter_attached = False


def _init_logging(level: str = "INFO") -> None:
    global _run_id_filter_attached
    root_logger = logging.getLogger()
    if not _run_id_filter_attached:
        root_logger.addFilter(_run_id_filter)
        _run_id_filter_attached = True
    for handler in root_logger.handlers:
        if _run_id_filter not in handler.filters:
            handler.addFilter(_run_id_filter)
    if root_logger.handlers:
        return

    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s [run_id=%(run_id)s] %(message)s",
    )
    for handler in logging.getLogger().handlers:
        if _run_id_filter not in handler.filters:
            handler.addFilter(_run_id_filter)


# ----------------------------------------------------------------------
# Argument parsing
# ----------------------------------------------------------------------
def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML or JSON GlobalConfig file")
    common.add_argument("--seed", type=int)
    common.add_argument("--lambda-index", dest="lambda_index", type=int)
    common.add_argument("--ablation")
    common.add_argument("--zeros", action="store_true", default=None, help="all-zero depth input")
    common.add_argument("--degrade-voxel", dest="degrade_voxel", type=float, metavar="METERS")
    common.add_argument("--out", type=Path, help="output root directory")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="pcic", description="Point-cloud assisted learned image compression"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    fixture = commands.add_parser("fixture", parents=[common], help="generate the synthetic dataset")
    fixture.add_argument("--root", type=Path)
    fixture.add_argument("--scenes", type=int, default=4)
    fixture.add_argument("--frames", type=int, default=4)
    fixture.add_argument("--height", type=int)
    fixture.add_argument("--width", type=int)

    project = commands.add_parser("project", parents=[common], help="write equalized depth maps")
    project.add_argument("--split", action="append", dest="splits")

    train = commands.add_parser("train", parents=[common], help="train one model per lambda")
    train.add_argument("--resume", type=Path)

    compress = commands.add_parser("compress", parents=[common], help="encode one frame")
    compress.add_argument("--checkpoint", type=Path, required=True)
    compress.add_argument("--image", type=Path, required=True)
    compress.add_argument("--depth", type=Path, help="equalized depth PGM")
    compress.add_argument("--output", type=Path, required=True)
    compress.add_argument("--reconstruction", type=Path)

    decompress = commands.add_parser("decompress", parents=[common], help="decode one stream")
    decompress.add_argument("--checkpoint", type=Path, required=True)
    decompress.add_argument("--stream", type=Path, required=True)
    decompress.add_argument(
        "--depth",
        type=Path,
        help="equalized depth PGM; required unless the stream was coded with --zeros",
    )
    decompress.add_argument("--output", type=Path, required=True)

    evaluate = commands.add_parser("eval", parents=[common], help="evaluate checkpoints on a split")
    evaluate.add_argument("--checkpoint", type=Path, action="append", dest="checkpoints")
    evaluate.add_argument("--split", default="test")
    evaluate.add_argument("--label")
    evaluate.add_argument("--curves", type=Path, help="curve file to merge into")

    bdrate = commands.add_parser("bdrate", parents=[common], help="BD-Rate of two curve files")
    bdrate.add_argument("test", type=Path)
    bdrate.add_argument("anchor", type=Path)
    bdrate.add_argument("--test-label")
    bdrate.add_argument("--anchor-label")

    report = commands.add_parser("report", parents=[common], help="plots and BD-Rate table")
    report.add_argument("curves", type=Path, nargs="*")
    report.add_argument("--anchor")
    return parser


def cli_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted config overrides for the flags that were given."""

    mapping = {
        "seed": "seed",
        "lambda_index": "codec.lambda_index",
        "ablation": "train.ablation",
        "zeros": "evaluation.zeros",
        "degrade_voxel": "evaluation.degrade_voxel",
        "out": "output.root",
    }
    overrides: Dict[str, Any] = {}
    for attribute, dotted in mapping.items():
        value = getattr(args, attribute, None)
        if value is not None:
            overrides[dotted] = str(value) if isinstance(value, Path) else value
    return overrides


def _resolve_config(args: argparse.Namespace, settings_obj: Settings) -> GlobalConfig:
    config = config_module.load_global_config(args.config, cli_overrides(args), settings_obj=settings_obj)
    if args.lambda_index is not None:
        lambdas = config.train.lambdas
        if not 0 <= args.lambda_index < len(lambdas):
            raise config_module.ConfigError(
                f"codec.lambda_index: {args.lambda_index} is outside train.lambdas ({len(lambdas)} values)"
            )
        config = dataclasses.replace(
            config, train=dataclasses.replace(config.train, lambda_=float(lambdas[args.lambda_index]))
        )
    return config


# ----------------------------------------------------------------------
# Shared helpers
# ----------------------------------------------------------------------
def _dataset_root(config: GlobalConfig) -> Path:
    if not config.dataset.root:
        raise config_module.ConfigError("dataset.root: required for this command")
    return Path(config.dataset.root)


def _split_spec(config: GlobalConfig) -> Dict[str, str]:
    if config.dataset.split_spec:
        return dict(config.dataset.split_spec)
    stored = _dataset_root(config) / SPLIT_MAP_NAME
    if stored.is_file():
        return json.loads(stored.read_text(encoding="utf-8"))
    raise config_module.ConfigError("dataset.split_spec: empty and no split map found next to the dataset")


def _manifest_path(config: GlobalConfig, split: str) -> Path:
    return config.output.manifest_dir / f"{split}.json"


def _load_manifests(config: GlobalConfig, splits: Sequence[str]):
    from dataset.ingest import load_manifest

    manifests = {}
    for split in splits:
        path = _manifest_path(config, split)
        if not path.is_file():
            if split == "train":
                raise FileNotFoundError(f"manifest {path} does not exist; run 'project' first")
            continue
        manifests[split] = load_manifest(path)
    return manifests


def _load_model(path: Path):
    from models.checkpoint import load_checkpoint

    return load_checkpoint(path).build_model()


def _read_depth(path: Optional[Path]):
    if path is None:
        return None
    from projection.depth_map import read_depth_pgm

    return read_depth_pgm(path)


def _default_label(config: GlobalConfig) -> str:
    label = config.train.ablation
    if config.evaluation.zeros:
        label += "-zeros"
    if config.evaluation.degrade_voxel is not None:
        label += f"-voxel{config.evaluation.degrade_voxel:g}"
    return label


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------
def _cmd_fixture(args: argparse.Namespace, config: GlobalConfig) -> int:
    from dataset.fixture import generate_fixture

    root = args.root or Path(config.dataset.root or "data/fixture")
    size: Dict[str, int] = {}
    if args.height is not None:
        size["height"] = args.height
    if args.width is not None:
        size["width"] = args.width
    summary = generate_fixture(
        root,
        scenes=args.scenes,
        frames_per_scene=args.frames,
        camera_index=config.dataset.camera_index,
        seed=config.seed,
        **size,
    )
    split_map = root / SPLIT_MAP_NAME
    split_map.write_text(json.dumps(summary.split_spec, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{summary.frames} frames written to {summary.root}")
    return 0


def _cmd_project(args: argparse.Namespace, config: GlobalConfig) -> int:
    from dataset.ingest import build_manifest, check_split_disjointness, save_manifest
    from projection.depth_map import project_manifest

    manifests = build_manifest(
        _dataset_root(config),
        _split_spec(config),
        camera_index=config.dataset.camera_index,
        roi_height=config.dataset.roi_height,
    )
    check_split_disjointness(manifests)
    for split, manifest in manifests.items():
        if args.splits and split not in args.splits:
            continue
        projected = project_manifest(
            manifest,
            config.projection,
            config.output.depth_dir / split,
            degrade_voxel=config.evaluation.degrade_voxel,
        )
        save_manifest(projected, _manifest_path(config, split))
    return 0


def _cmd_train(args: argparse.Namespace, config: GlobalConfig) -> int:
    from training.trainer import train, train_sweep

    manifests = _load_manifests(config, ("train", "val"))
    if args.lambda_index is not None or args.resume is not None:
        result = train(config, manifests, resume_from=args.resume)
        logger.info("Finished %s at step %d", result.run_name, result.final_step)
    else:
        results = train_sweep(config, manifests)
        logger.info("Finished lambda sweep: %s", ", ".join(f"{value:g}" for value in results))
    return 0


def _cmd_compress(args: argparse.Namespace, config: GlobalConfig) -> int:
    from PIL import Image

    from coding.pipeline import compress, tensor_to_image
    from dataset.ingest import load_image
    from evaluation.metrics import bpp

    model = _load_model(args.checkpoint)
    image = load_image(args.image)
    depth = None if config.evaluation.zeros else _read_depth(args.depth)
    if depth is None and model.context_net is not None and not config.evaluation.zeros:
        logger.warning("No depth map given; coding %s with an all-zero context", args.image)
    result = compress(image, depth, model, zeros=config.evaluation.zeros)
    result.bitstream.write(args.output)
    if args.reconstruction is not None:
        args.reconstruction.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(tensor_to_image(result.reconstruction)).save(args.reconstruction)
    height, width = image.shape[:2]
    print(f"{result.bitstream.total_bytes} bytes, {bpp(result.bitstream, height, width):.4f} bpp")
    return 0


def _cmd_decompress(args: argparse.Namespace, config: GlobalConfig) -> int:
    from PIL import Image

    from coding.bitstream import Bitstream
    from coding.pipeline import decompress, tensor_to_image

    model = _load_model(args.checkpoint)
    stream = Bitstream.read(args.stream)
    x_hat = decompress(stream, _read_depth(args.depth), model)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(tensor_to_image(x_hat)).save(args.output)
    return 0


def _merge_curves(path: Path, curve) -> List[Any]:
    from evaluation.metrics import load_curves

    curves = [item for item in load_curves(path) if item.label != curve.label] if path.is_file() else []
    curves.append(curve)
    return curves


def _cmd_eval(args: argparse.Namespace, config: GlobalConfig) -> int:
    from evaluation.evaluator import Evaluator
    from evaluation.metrics import save_curves
    from logs.frame_record_log import FrameRecordLog
    from models.checkpoint import latest_checkpoint

    manifest = _load_manifests(config, (args.split,)).get(args.split)
    if manifest is None:
        raise FileNotFoundError(f"manifest {_manifest_path(config, args.split)} does not exist")
    checkpoints = list(args.checkpoints or [])
    if not checkpoints:
        for value in config.train.lambdas:
            found = latest_checkpoint(config.output.checkpoint_dir, config.train.ablation, value)
            if found is not None:
                checkpoints.append(found)
    if not checkpoints:
        raise FileNotFoundError(
            f"no {config.train.ablation} checkpoints under {config.output.checkpoint_dir}"
        )

    label = args.label or _default_label(config)
    record_log = FrameRecordLog(config.output.records_dir / f"{label}.jsonl")
    record_log.reset()
    evaluator = Evaluator(
        manifest,
        config.projection,
        zeros=config.evaluation.zeros,
        degrade_voxel=config.evaluation.degrade_voxel,
        record_log=record_log,
    )
    curve = evaluator.evaluate_checkpoints(checkpoints, label)
    target = args.curves or config.output.root_path / "curves.json"
    save_curves(_merge_curves(target, curve), target)
    for point in curve.points:
        print(f"{label}: {point.bpp:.4f} bpp, {point.psnr:.3f} dB")
    return 0


def _pick(curves, label: Optional[str], source: Path):
    if not curves:
        raise ValueError(f"{source} holds no curves")
    if label is None:
        return curves[0]
    for curve in curves:
        if curve.label == label:
            return curve
    raise ValueError(f"{source} has no curve labelled {label}")


def _cmd_bdrate(args: argparse.Namespace, config: GlobalConfig) -> int:
    from evaluation.metrics import bd_rate, load_curves

    test = _pick(load_curves(args.test), args.test_label, args.test)
    anchor = _pick(load_curves(args.anchor), args.anchor_label, args.anchor)
    print(f"{bd_rate(test, anchor):.2f}%")
    return 0


def _cmd_report(args: argparse.Namespace, config: GlobalConfig) -> int:
    from evaluation.metrics import load_curves
    from evaluation.reporting import emit_report

    sources = args.curves or [config.output.root_path / "curves.json"]
    curves = [curve for source in sources for curve in load_curves(source)]
    paths = emit_report(
        curves,
        config.output.report_dir,
        args.anchor or config.evaluation.anchor,
        config.evaluation.baselines,
    )
    print(paths.table_csv.read_text(encoding="utf-8"), end="")
    return 0


_HANDLERS: Dict[str, Callable[[argparse.Namespace, GlobalConfig], int]] = {
    "fixture": _cmd_fixture,
    "project": _cmd_project,
    "train": _cmd_train,
    "compress": _cmd_compress,
    "decompress": _cmd_decompress,
    "eval": _cmd_eval,
    "bdrate": _cmd_bdrate,
    "report": _cmd_report,
}


def run(command: str, args: argparse.Namespace, settings_obj: Optional[Settings] = None) -> int:
    """Validate the whole config, then run one command; returns the exit status."""

    active = settings_obj or Settings()
    try:
        config = _resolve_config(args, active)
        with pipeline_run(attributes={"command": command}):
            return _HANDLERS[command](args, config)
    except config_module.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 3
    except (ValueError, RuntimeError, KeyError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(list(argv) if argv is not None else None)
    active = Settings()
    _init_logging(active.log_level)
    configure_observability(enabled=active.otel_enabled, service_name=active.otel_service_name)
    try:
        return run(args.command, args, active)
    finally:
        shutdown_observability()


if __name__ == "__main__":
    sys.exit(main())
