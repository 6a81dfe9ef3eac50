"""Adam with bias correction and a cosine-annealed learning rate."""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np
from pydantic import BaseModel, Field, model_validator

from posr.tensor import Parameter, ShapeError

logger = logging.getLogger(__name__)


class OptimError(Exception):
    """Base exception for optimizer errors."""
    pass


class ScheduleRangeError(OptimError):
    """Raised when a schedule is queried outside [0, T]."""
    pass


@dataclass
class AdamState:
    """Moment buffers keyed by parameter name and a step counter shared by all parameters."""
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], grads: Dict[str, np.ndarray], state: AdamState, lr: float) -> AdamState:
    """
    One Adam update applied in place to every parameter.

    Raises:
        OptimError: non-positive lr or a parameter without a gradient
        ShapeError: gradient shape differs from its parameter
    """
    if lr <= 0:
        raise OptimError(f"learning rate must be positive, got {lr}")
    missing = [p.name for p in params if p.name not in grads]
    if missing:
        raise OptimError(f"No gradient for parameters: {missing}")
    for p in params:
        if grads[p.name].shape != p.shape:
            raise ShapeError(f"{p.name}: gradient shape {grads[p.name].shape} != parameter shape {p.shape}")

    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t
    for p in params:
        g = grads[p.name]
        m = state.m.get(p.name)
        v = state.v.get(p.name)
        if m is None:
            m = np.zeros_like(p.values)
            v = np.zeros_like(p.values)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[p.name] = m
        state.v[p.name] = v
        p.values -= lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
    return state


class CosineSchedule(BaseModel):
    eta_max: float = Field(default=0.005, gt=0)
    eta_min: float = Field(default=0.0, ge=0)
    total_steps: int = Field(..., gt=0)

    @model_validator(mode="after")
    def validate_range(self):
        if self.eta_min > self.eta_max:
            raise ValueError("eta_min must not exceed eta_max")
        return self


def cosine_lr(schedule: CosineSchedule, t: int) -> float:
    """eta_min + (eta_max - eta_min) * (1 + cos(pi * t / T)) / 2."""
    if t < 0 or t > schedule.total_steps:
        raise ScheduleRangeError(f"step {t} outside [0, {schedule.total_steps}]")
    cosine = 1.0 + math.cos(math.pi * t / schedule.total_steps)
    return schedule.eta_min + 0.5 * (schedule.eta_max - schedule.eta_min) * cosine
