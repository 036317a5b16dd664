"""Training loop, validation loss and the lambda sweep."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

import numpy as np
import torch

from config.config import GlobalConfig
from dataset.ingest import DatasetManifest
from logs import MetricsLogManager, get_metrics_log_manager
from models.checkpoint import load_checkpoint, save_checkpoint
from models.codec import PointCloudCodec
from models.factory import create_model
from training.batches import FrameStore, centre_patches, make_patch_batch
from training.losses import DivergenceError, LossComponents, total_loss
from utils.observability import observe_operation


@dataclass
class TrainResult:
    run_name: str
    final_step: int
    checkpoints: List[Path] = field(default_factory=list)
    history: List[LossComponents] = field(default_factory=list)
    validation: Dict[int, float] = field(default_factory=dict)


def step_seed(seed: int, step: int) -> int:
    """Seed for everything random at ``step``; independent of how the run got there."""

    return int(np.random.SeedSequence([int(seed), int(step)]).generate_state(1)[0])


def run_name_for(config: GlobalConfig) -> str:
    return f"{config.train.ablation}_{config.train.lambda_:g}"


def _split_parameters(model: PointCloudCodec):
    main, aux = [], []
    for name, parameter in model.named_parameters():
        (aux if name.endswith("quantiles") else main).append(parameter)
    return main, aux


@torch.no_grad()
def validation_loss(
    model: PointCloudCodec,
    manifest: Union[DatasetManifest, FrameStore],
    config: GlobalConfig,
    step: int,
) -> float:
    """Mean total loss over deterministic centre patches with rounding quantization."""

    store = manifest if isinstance(manifest, FrameStore) else FrameStore(manifest)
    batch = centre_patches(store, config.train.patch)
    was_training = model.training
    model.eval()
    losses = []
    try:
        for index in range(len(batch)):
            images = batch.images[index : index + 1]
            depths = batch.depths[index : index + 1] if model.context_net is not None else None
            _, components = total_loss(
                images,
                depths,
                model,
                step,
                config.train,
                mode="round",
                color_seed=step_seed(config.train.seed, index),
            )
            losses.append(components.loss)
    finally:
        model.train(was_training)
    return float(np.mean(losses))


class Trainer:
    """Optimises one ablation variant at one lambda."""

    def __init__(
        self,
        config: GlobalConfig,
        manifests: Mapping[str, DatasetManifest],
        *,
        model: Optional[PointCloudCodec] = None,
        metrics_log: Optional[MetricsLogManager] = None,
        checkpoint_dir: Optional[Path] = None,
        logger: Optional[logging.Logger] = None,
    ) -> None:
        if "train" not in manifests or not len(manifests["train"]):
            raise ValueError("a non-empty train manifest is required")
        self.config = config
        self.train_cfg = config.train
        cache_size = config.train.frame_cache_size
        self.store = FrameStore(manifests["train"], cache_size)
        self.val_store = (
            FrameStore(manifests["val"], cache_size) if manifests.get("val") else None
        )
        self.logger = logger or logging.getLogger(self.__class__.__name__)
        self.model = model or create_model(config)
        self.model.train()
        main, aux = _split_parameters(self.model)
        self.optimizer = torch.optim.Adam(
            main,
            lr=self.train_cfg.learning_rate,
            betas=(self.train_cfg.adam_beta1, self.train_cfg.adam_beta2),
        )
        self.aux_optimizer = torch.optim.Adam(aux, lr=self.train_cfg.aux_learning_rate)
        self.metrics_log = metrics_log or get_metrics_log_manager(
            config.output.metrics_dir
        )
        self.checkpoint_dir = Path(checkpoint_dir or config.output.checkpoint_dir)
        self.run_name = run_name_for(config)
        self.step = 0

    def resume(self, path: Union[str, Path]) -> int:
        checkpoint = load_checkpoint(path)
        if checkpoint.variant.ablation != self.model.variant.ablation:
            raise ValueError(
                f"checkpoint ablation {checkpoint.variant.ablation} != {self.model.variant.ablation}"
            )
        self.model.load_state_dict(checkpoint.model_state)
        if checkpoint.optimizer_state is not None:
            self.optimizer.load_state_dict(checkpoint.optimizer_state)
        if checkpoint.aux_optimizer_state is not None:
            self.aux_optimizer.load_state_dict(checkpoint.aux_optimizer_state)
        self.step = checkpoint.step
        if self.metrics_log is not None:
            self.metrics_log.truncate_after(self.run_name, self.step - 1)
        self.logger.info("Resumed %s at step %d", self.run_name, self.step)
        return self.step

    def train_step(self, step: int) -> LossComponents:
        seed = step_seed(self.train_cfg.seed, step)
        rng = np.random.default_rng(seed)
        generator = torch.Generator().manual_seed(seed)
        batch = make_patch_batch(
            self.store, rng, batch_size=self.train_cfg.batch_size, patch=self.train_cfg.patch
        )
        depths = batch.depths if self.model.context_net is not None else None

        self.optimizer.zero_grad(set_to_none=True)
        loss, components = total_loss(
            batch.images,
            depths,
            self.model,
            step,
            self.train_cfg,
            generator=generator,
            color_seed=seed,
        )
        loss.backward()
        main_params = self.optimizer.param_groups[0]["params"]
        torch.nn.utils.clip_grad_norm_(main_params, self.train_cfg.grad_clip)
        self.optimizer.step()

        self.aux_optimizer.zero_grad(set_to_none=True)
        aux_loss = self.model.aux_loss()
        aux_loss.backward()
        self.aux_optimizer.step()

        if self.metrics_log is not None:
            entry = components.to_log()
            entry["step"] = step
            entry["aux_loss"] = float(aux_loss.detach())
            self.metrics_log.append(self.run_name, entry)
        return components

    def save(self) -> Path:
        return save_checkpoint(
            self.checkpoint_dir,
            self.model,
            self.config,
            self.step,
            optimizer=self.optimizer,
            aux_optimizer=self.aux_optimizer,
        )

    def run(self, resume_from: Optional[Union[str, Path]] = None) -> TrainResult:
        if resume_from is not None:
            self.resume(resume_from)
        elif self.metrics_log is not None:
            self.metrics_log.reset(self.run_name)

        result = TrainResult(run_name=self.run_name, final_step=self.step)
        total = self.train_cfg.total_steps
        self.logger.info(
            "Training %s for %d steps (lambda=%g, batch=%d, patch=%d)",
            self.run_name,
            total,
            self.train_cfg.lambda_,
            self.train_cfg.batch_size,
            self.train_cfg.patch,
        )
        with observe_operation("train", {"run": self.run_name, "steps": total}):
            while self.step < total:
                try:
                    components = self.train_step(self.step)
                except DivergenceError as exc:
                    self.logger.error(
                        "Diverged at step %d (%s=%s); last checkpoint kept",
                        self.step,
                        exc.component,
                        exc.value,
                    )
                    raise
                result.history.append(components)
                self.step += 1
                if self.step % self.train_cfg.checkpoint_every == 0 or self.step == total:
                    result.checkpoints.append(self.save())
                    if self.val_store is not None:
                        value = validation_loss(self.model, self.val_store, self.config, self.step)
                        result.validation[self.step] = value
                        self.logger.info("Validation loss at step %d: %.6f", self.step, value)
                if self.step % 50 == 0:
                    self.logger.info(
                        "step %d loss %.4f rate_y %.4f rate_z %.4f mse %.2f",
                        self.step,
                        components.loss,
                        components.rate_y,
                        components.rate_z,
                        components.mse,
                    )
        result.final_step = self.step
        return result


def train(
    config: GlobalConfig,
    manifests: Mapping[str, DatasetManifest],
    *,
    resume_from: Optional[Union[str, Path]] = None,
    metrics_log: Optional[MetricsLogManager] = None,
) -> TrainResult:
    return Trainer(config, manifests, metrics_log=metrics_log).run(resume_from)


def sweep_configs(config: GlobalConfig) -> List[GlobalConfig]:
    """One config per lambda; ``lambda_index`` is the position in ``train.lambdas``."""

    configs = []
    for index, value in enumerate(config.train.lambdas):
        configs.append(
            dataclasses.replace(
                config,
                train=dataclasses.replace(config.train, lambda_=float(value)),
                codec=dataclasses.replace(config.codec, lambda_index=index),
            )
        )
    return configs


def train_sweep(
    config: GlobalConfig,
    manifests: Mapping[str, DatasetManifest],
    *,
    metrics_log: Optional[MetricsLogManager] = None,
) -> Dict[float, TrainResult]:
    results: Dict[float, TrainResult] = {}
    for sweep_config in sweep_configs(config):
        results[sweep_config.train.lambda_] = train(
            sweep_config, manifests, metrics_log=metrics_log
        )
    return results


__all__ = [
    "TrainResult",
    "Trainer",
    "run_name_for",
    "step_seed",
    "sweep_configs",
    "train",
    "train_sweep",
    "validation_loss",
]
