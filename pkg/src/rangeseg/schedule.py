"""One-cycle ("super-convergence") learning-rate and momentum schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

from rangeseg.errors import ConfigError, StepOutOfRangeError


@dataclass(frozen=True)
class ScheduleConfig:
    lr_max: float = 0.05
    total_steps: int = 500
    div_factor: float = 25.0
    final_div: float = 1e4
    warmup_fraction: float = 0.3
    momentum_min: float = 0.85
    momentum_max: float = 0.95

    def __post_init__(self):
        if not self.lr_max > 0 or self.div_factor <= 0 or self.final_div <= 0:
            raise ConfigError("learning rates must stay strictly positive")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be non-negative")
        if not 0 <= self.warmup_fraction <= 1:
            raise ConfigError("warmup_fraction must lie in [0, 1]")
        if not 0 <= self.momentum_min <= self.momentum_max < 1:
            raise ConfigError("need 0 <= momentum_min <= momentum_max < 1")

    @property
    def warmup_steps(self) -> float:
        return self.warmup_fraction * self.total_steps


def _cos_interp(start, end, frac):
    return end + (start - end) * (1 + math.cos(math.pi * frac)) / 2


def _phase(step, sched):
    if not 0 <= step <= sched.total_steps:
        raise StepOutOfRangeError(f"step {step} outside [0, {sched.total_steps}]")
    warm = sched.warmup_steps
    if step <= warm:
        return "up", (step / warm if warm > 0 else 1.0)
    return "down", (step - warm) / (sched.total_steps - warm)


def lr_at(step: int, sched: ScheduleConfig) -> float:
    """Cosine ramp ``lr_max/div_factor -> lr_max`` during warmup, then cosine
    decay ``lr_max -> lr_max/final_div``."""
    phase, frac = _phase(step, sched)
    if phase == "up":
        return _cos_interp(sched.lr_max / sched.div_factor, sched.lr_max, frac)
    return _cos_interp(sched.lr_max, sched.lr_max / sched.final_div, frac)


def momentum_at(step: int, sched: ScheduleConfig) -> float:
    """Momentum mirrors the learning rate: high while lr is low and vice versa."""
    phase, frac = _phase(step, sched)
    if phase == "up":
        return _cos_interp(sched.momentum_max, sched.momentum_min, frac)
    return _cos_interp(sched.momentum_min, sched.momentum_max, frac)
