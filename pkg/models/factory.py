"""Registry of ablation recipes that turn a GlobalConfig into a codec variant."""

from __future__ import annotations

import dataclasses
from typing import Callable, Dict, Iterable, Optional

import torch

from config.config import GlobalConfig
from models.codec import ModelVariant, PointCloudCodec

VariantBuilder = Callable[[GlobalConfig], ModelVariant]

_REGISTRY: Dict[str, VariantBuilder] = {}
_DEFAULT: Optional[str] = None


def register_ablation(*names: str, is_default: bool = False) -> Callable[[VariantBuilder], VariantBuilder]:
    """Register a variant builder under one or more ablation names."""

    if not names:
        raise ValueError("At least one ablation name must be provided.")

    def decorator(builder: VariantBuilder) -> VariantBuilder:
        global _DEFAULT
        for name in names:
            _REGISTRY[name] = builder
        if is_default or _DEFAULT is None:
            _DEFAULT = names[0]
        return builder

    return decorator


def build_variant(config: GlobalConfig, name: Optional[str] = None) -> ModelVariant:
    name = name or config.train.ablation or _DEFAULT
    if not name:
        raise KeyError("No default ablation registered.")
    builder = _REGISTRY.get(name)
    if builder is None:
        available = ", ".join(sorted(_REGISTRY)) or "<none>"
        raise KeyError(f"Ablation '{name}' is not registered. Available options: {available}.")
    return dataclasses.replace(builder(config), ablation=name)


def create_model(
    config: GlobalConfig, name: Optional[str] = None, *, seed: Optional[int] = None
) -> PointCloudCodec:
    """Instantiate a freshly initialised model; weights depend only on ``seed``."""

    torch.manual_seed(config.train.seed if seed is None else seed)
    return PointCloudCodec(build_variant(config, name))


def available_ablations() -> Iterable[str]:
    return sorted(_REGISTRY)


def _base(config: GlobalConfig, **overrides) -> ModelVariant:
    variant = ModelVariant(
        n_channels=config.codec.n_channels,
        m_channels=config.codec.m_channels,
        lambda_index=config.codec.lambda_index,
        conditional=config.codec.conditional,
        inject_encoder=config.codec.injection_sides in ("encoder", "both"),
        inject_decoder=config.codec.injection_sides in ("decoder", "both"),
        context=config.context,
    )
    return dataclasses.replace(variant, **overrides)


@register_ablation("full", is_default=True)
def _full(config: GlobalConfig) -> ModelVariant:
    return _base(config)


@register_ablation("no_pip")
def _no_pip(config: GlobalConfig) -> ModelVariant:
    return _base(config, conditional=True, use_pip=False)


@register_ablation("no_fg")
def _no_fg(config: GlobalConfig) -> ModelVariant:
    return _base(config, conditional=True, use_fg=False)


@register_ablation("no_ff")
def _no_ff(config: GlobalConfig) -> ModelVariant:
    return _base(config, conditional=True, use_ff=False)


@register_ablation("encoder_only")
def _encoder_only(config: GlobalConfig) -> ModelVariant:
    return _base(config, conditional=True, inject_encoder=True, inject_decoder=False)


@register_ablation("decoder_only")
def _decoder_only(config: GlobalConfig) -> ModelVariant:
    return _base(config, conditional=True, inject_encoder=False, inject_decoder=True)


@register_ablation("zeros_input")
def _zeros_input(config: GlobalConfig) -> ModelVariant:
    return _base(config, conditional=True, zeros_input=True)


@register_ablation("baseline")
def _baseline(config: GlobalConfig) -> ModelVariant:
    return _base(config, conditional=False, zeros_input=False)


@register_ablation("baseline_pa")
def _baseline_pa(config: GlobalConfig) -> ModelVariant:
    factor = config.codec.pa_width_factor
    return _base(
        config,
        conditional=False,
        zeros_input=False,
        n_channels=int(round(config.codec.n_channels * factor)),
        m_channels=int(round(config.codec.m_channels * factor)),
    )


__all__ = [
    "available_ablations",
    "build_variant",
    "create_model",
    "register_ablation",
]
