"""Piecewise-constant weight of the auxiliary prediction loss."""

from __future__ import annotations

from typing import List, Sequence, Tuple

from config.config import TrainConfig

DEFAULT_BREAKPOINTS: Tuple[Tuple[float, float], ...] = ((0.0, 0.01), (0.5, 0.005), (0.9, 0.0))


def default_alpha_schedule(total_steps: int) -> List[Tuple[int, float]]:
    """Breakpoints at 50% and 90% of ``total_steps``; equal thresholds keep the later alpha."""

    schedule: List[Tuple[int, float]] = []
    for fraction, alpha in DEFAULT_BREAKPOINTS:
        threshold = int(fraction * total_steps)
        if schedule and schedule[-1][0] == threshold:
            schedule[-1] = (threshold, alpha)
        else:
            schedule.append((threshold, alpha))
    return schedule


def resolve_schedule(config: TrainConfig) -> List[Tuple[int, float]]:
    if config.alpha_schedule is not None:
        return [(int(threshold), float(alpha)) for threshold, alpha in config.alpha_schedule]
    return default_alpha_schedule(config.total_steps)


def alpha_at(step: int, schedule: Sequence[Tuple[int, float]]) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    alpha = schedule[0][1]
    for threshold, value in schedule:
        if threshold > step:
            break
        alpha = value
    return float(alpha)


def alpha_schedule(step: int, config: TrainConfig) -> float:
    return alpha_at(step, resolve_schedule(config))


__all__ = ["alpha_at", "alpha_schedule", "default_alpha_schedule", "resolve_schedule"]
