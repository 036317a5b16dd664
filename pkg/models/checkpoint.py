"""Single-file checkpoint container: weights, variant, config and optimizer state."""

from __future__ import annotations

import dataclasses
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import torch

from config.config import ContextNetConfig, GlobalConfig, config_to_dict, global_config_from_dict
from models.codec import ModelVariant, PointCloudCodec

logger = logging.getLogger(__name__)

CHECKPOINT_PATTERN = re.compile(r"^(?P<model>.+)_(?P<lam>[0-9.eE+-]+)_(?P<step>\d+)\.pt$")


@dataclass
class Checkpoint:
    model_state: Dict[str, torch.Tensor]
    variant: ModelVariant
    config: GlobalConfig
    step: int
    lambda_: float
    optimizer_state: Optional[Dict[str, Any]] = None
    aux_optimizer_state: Optional[Dict[str, Any]] = None

    def build_model(self) -> PointCloudCodec:
        model = PointCloudCodec(self.variant)
        model.load_state_dict(self.model_state)
        model.eval()
        return model


def checkpoint_name(model_name: str, lambda_: float, step: int) -> str:
    return f"{model_name}_{lambda_:g}_{step}.pt"


def _variant_to_dict(variant: ModelVariant) -> Dict[str, Any]:
    return dataclasses.asdict(variant)


def _variant_from_dict(data: Dict[str, Any]) -> ModelVariant:
    payload = dict(data)
    payload["context"] = ContextNetConfig(**payload.get("context", {}))
    return ModelVariant(**payload)


def save_checkpoint(
    directory: Union[str, Path],
    model: PointCloudCodec,
    config: GlobalConfig,
    step: int,
    *,
    optimizer: Optional[torch.optim.Optimizer] = None,
    aux_optimizer: Optional[torch.optim.Optimizer] = None,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lambda_ = config.train.lambda_
    target = directory / checkpoint_name(model.variant.ablation, lambda_, step)
    payload = {
        "model": model.state_dict(),
        "variant": _variant_to_dict(model.variant),
        "config": config_to_dict(config),
        "step": int(step),
        "lambda": float(lambda_),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "aux_optimizer": aux_optimizer.state_dict() if aux_optimizer is not None else None,
    }
    tmp = target.with_suffix(".tmp")
    torch.save(payload, tmp)
    tmp.replace(target)
    logger.info("Saved checkpoint %s", target)
    return target


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    source = Path(path)
    if not source.is_file():
        raise FileNotFoundError(f"checkpoint {source} does not exist")
    payload = torch.load(source, map_location="cpu", weights_only=True)
    return Checkpoint(
        model_state=payload["model"],
        variant=_variant_from_dict(payload["variant"]),
        config=global_config_from_dict(payload["config"]),
        step=int(payload["step"]),
        lambda_=float(payload["lambda"]),
        optimizer_state=payload.get("optimizer"),
        aux_optimizer_state=payload.get("aux_optimizer"),
    )


def list_checkpoints(directory: Union[str, Path], model_name: Optional[str] = None) -> List[Path]:
    """Checkpoints in ``directory`` ordered by (lambda, step)."""

    directory = Path(directory)
    if not directory.is_dir():
        return []
    found = []
    for path in directory.glob("*.pt"):
        match = CHECKPOINT_PATTERN.match(path.name)
        if not match:
            continue
        if model_name is not None and match.group("model") != model_name:
            continue
        found.append((float(match.group("lam")), int(match.group("step")), path))
    return [path for _, _, path in sorted(found)]


def latest_checkpoint(
    directory: Union[str, Path], model_name: str, lambda_: float
) -> Optional[Path]:
    prefix = f"{model_name}_{lambda_:g}_"
    candidates = [path for path in list_checkpoints(directory, model_name) if path.name.startswith(prefix)]
    return candidates[-1] if candidates else None


__all__ = [
    "Checkpoint",
    "checkpoint_name",
    "latest_checkpoint",
    "list_checkpoints",
    "load_checkpoint",
    "save_checkpoint",
]
