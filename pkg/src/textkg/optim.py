"""Adam with L2 weight decay, and the linear warmup/decay schedule."""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


class TrainingDivergence(FloatingPointError):
    pass


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    epsilon: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, state, lr, grads=None):
    """One Adam update in place.

    ``grads`` defaults to each parameter's ``.grad``.  Weight decay is added
    to the gradient (``g + wd * p``) before the moment updates, for params
    whose ``decay`` attribute is true.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if g.shape != p.data.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.data.shape} ({p.name})")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(f"non-finite gradient in parameter {p.name!r}")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if state.weight_decay and getattr(p, "decay", True):
            g = g + state.weight_decay * p.data
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


@dataclass(frozen=True)
class LrSchedule:
    total_steps: int
    base_lr: float = 1e-4
    warmup_fraction: float = 0.1

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in (0, 1)")

    @property
    def warmup_steps(self):
        # exact decimal product: 0.1 * 30 is 3.0000000000000004 in floating point
        return math.ceil(Fraction(repr(self.warmup_fraction)) * self.total_steps)


def lr_at(schedule, step):
    """Linear ramp 0 -> base_lr over the warmup steps, then linear to 0."""
    total = schedule.total_steps
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    w = schedule.warmup_steps
    # exact rational arithmetic, rounded once: every step lies on the line
    if step < w:
        ratio = Fraction(step, w)
    else:
        ratio = Fraction(total - step, max(total - w, 1))
    return float(Fraction(schedule.base_lr) * ratio)
