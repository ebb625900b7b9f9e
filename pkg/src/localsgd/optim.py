"""Local update rule, learning-rate schedules and local-step schedules."""

from __future__ import annotations

import dataclasses
import math
from typing import Optional, Sequence, Tuple

import numpy as np

MOMENTUM_STYLES = ("none", "heavy-ball", "nesterov")
LR_KINDS = ("constant", "inverse-t", "step-decay", "warmup-then-step")
H_KINDS = ("constant", "post-local", "warmup-linear", "warmup-exponential", "warmup-constant")


@dataclasses.dataclass
class MomentumState:
    buffer: np.ndarray
    m: float = 0.0
    style: str = "none"

    def __post_init__(self):
        if self.style not in MOMENTUM_STYLES:
            raise ValueError(f"unknown momentum style {self.style!r}")
        if not 0.0 <= self.m < 1.0:
            raise ValueError("momentum coefficient must be in [0, 1)")
        if self.style == "none" and self.m != 0.0:
            raise ValueError("style 'none' requires m = 0")

    @classmethod
    def zeros(cls, d: int, m: float = 0.0, style: str = "none") -> "MomentumState":
        return cls(np.zeros(d), m, style)

    def copy(self) -> "MomentumState":
        return MomentumState(self.buffer.copy(), self.m, self.style)


def update_direction(grad: np.ndarray, w: np.ndarray, mom: MomentumState,
                     weight_decay: float = 0.0) -> Tuple[np.ndarray, MomentumState]:
    """Direction ``d`` such that the step is ``w - lr * d``, and the new momentum state."""
    if grad.shape != w.shape or mom.buffer.shape != w.shape:
        raise ValueError("dimension mismatch")
    g = grad + weight_decay * w if weight_decay else grad
    if mom.style == "none":
        return g, mom
    u = mom.m * mom.buffer + g
    new = MomentumState(u, mom.m, mom.style)
    if mom.style == "heavy-ball":
        return u, new
    return g + mom.m * u, new


def sgd_step(w: np.ndarray, grad: np.ndarray, lr: float, mom: MomentumState,
             weight_decay: float = 0.0) -> Tuple[np.ndarray, MomentumState]:
    """One local step. With ``m = 0`` and no weight decay this is exactly ``w - lr * grad``."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    direction, mom = update_direction(grad, w, mom, weight_decay)
    return w - lr * direction, mom


def sign(x: np.ndarray) -> np.ndarray:
    """Sign with ``sign(0) = +1``."""
    return np.where(x < 0, -1.0, 1.0)


# -- learning rates ------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class LrSchedule:
    """Learning-rate schedule.

    ``constant``: ``base``. ``inverse-t``: ``min(cap, base * n / (t + 1))``
    where ``base`` plays the role of ``c`` and ``n`` is ``epoch_size``.
    ``step-decay``: ``base`` divided by ``decay_factor`` at each milestone
    (fractions of the sample budget). ``warmup-then-step``: linear ramp from
    ``base`` to ``scale * base`` over ``warmup_epochs`` epochs of samples,
    then step decay from ``scale * base``.
    """

    kind: str = "constant"
    base: float = 0.1
    cap: float = 32.0
    epoch_size: int = 1
    milestones: Tuple[float, ...] = (0.5, 0.75)
    decay_factor: float = 10.0
    warmup_epochs: float = 5.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in LR_KINDS:
            raise ValueError(f"unknown lr schedule {self.kind!r}")
        if self.base <= 0 or self.cap <= 0 or self.decay_factor <= 0 or self.scale <= 0:
            raise ValueError("lr schedule parameters must be positive")
        if self.epoch_size < 1:
            raise ValueError("epoch_size must be >= 1")
        object.__setattr__(self, "milestones", tuple(sorted(float(m) for m in self.milestones)))

    def decays_passed(self, samples: int, budget: int) -> int:
        return sum(1 for m in self.milestones if samples >= m * budget)

    def first_milestone_samples(self, budget: int) -> Optional[float]:
        if self.kind not in ("step-decay", "warmup-then-step") or not self.milestones:
            return None
        return self.milestones[0] * budget


def lr_at(s: LrSchedule, t: int, samples: int = 0, budget: int = 1) -> float:
    """Learning rate at local step ``t`` after ``samples`` of a ``budget`` were accessed."""
    if s.kind == "constant":
        return s.base
    if s.kind == "inverse-t":
        return min(s.cap, s.base * s.epoch_size / (t + 1))
    if s.kind == "step-decay":
        return s.base / s.decay_factor ** s.decays_passed(samples, budget)
    # warmup-then-step
    peak = s.scale * s.base
    ramp = s.warmup_epochs * s.epoch_size
    decay = s.decay_factor ** s.decays_passed(samples, budget)
    if samples < ramp:
        # a milestone inside the ramp still applies
        return (s.base + (peak - s.base) * (samples / ramp)) / decay
    return peak / decay


# -- local-step schedules ------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class HSchedule:
    """Number of local steps per synchronization round.

    ``switch`` is the last mini-batch round of post-local SGD; ``period`` is
    the warm-up length in rounds.
    """

    kind: str = "constant"
    H: int = 1
    switch: Optional[int] = None
    period: int = 1

    def __post_init__(self):
        if self.kind not in H_KINDS:
            raise ValueError(f"unknown H schedule {self.kind!r}")
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if self.period < 1:
            raise ValueError("warm-up period must be >= 1")
        if self.switch is not None and self.switch < 0:
            raise ValueError("switch round must be >= 0")

    def with_switch(self, switch: int) -> "HSchedule":
        return dataclasses.replace(self, switch=switch)


def local_steps_at(h: HSchedule, t: int) -> int:
    """Local steps in sync round ``t`` (1-based)."""
    if t < 1:
        raise ValueError("round index is 1-based")
    if h.kind == "constant":
        return h.H
    if h.kind == "post-local":
        if h.switch is None:
            raise ValueError("post-local schedule has no switch round")
        return 1 if t <= h.switch else h.H
    if h.kind == "warmup-exponential":
        # avoid materializing 2 ** (t - 1) for large t
        return h.H if t - 1 >= h.H.bit_length() else min(h.H, 1 << (t - 1))
    if h.kind == "warmup-linear":
        return max(1, min(h.H, math.ceil(t * h.H / h.period)))
    # warmup-constant
    return 1 if t <= h.period else h.H


class IterateAverage:
    """Uniform running average of the iterates seen so far."""

    def __init__(self, d: int):
        self.mean = np.zeros(d)
        self.count = 0

    def update(self, w: np.ndarray) -> np.ndarray:
        self.count += 1
        self.mean += (w - self.mean) / self.count
        return self.mean

    @property
    def value(self) -> np.ndarray:
        return self.mean

