"""Adam and the learning-rate schedules used by the challenge recipes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              lr: float | None = None) -> dict[str, np.ndarray]:
    """Bias-corrected Adam update, in place on ``params`` (also returned).

    Parameters without a gradient are left untouched.
    """
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        g = g.astype(np.float64)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape, np.float64)
            state.v[name] = np.zeros(p.shape, np.float64)
        v = state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        params[name] = (p - update).astype(p.dtype)
    return params


@dataclass(frozen=True)
class StepHalving:
    initial: float
    period: int

    def rate(self, step: int) -> float:
        return self.initial * 2.0 ** -(step // self.period)


@dataclass(frozen=True)
class Cyclic:
    """Linear decay from ``start`` to ``floor`` inside each period, then reset."""

    start: float
    floor: float
    period: int

    def __post_init__(self):
        if self.floor > self.start:
            raise ValueError("floor must not exceed start")

    def rate(self, step: int) -> float:
        pos = (step % self.period) / self.period
        return self.start + (self.floor - self.start) * pos


@dataclass(frozen=True)
class Range:
    """Linear decay from ``high`` to ``low`` over ``total`` steps, flat afterwards."""

    high: float
    low: float
    total: int

    def rate(self, step: int) -> float:
        frac = min(step, self.total) / self.total if self.total > 0 else 1.0
        return self.high + (self.low - self.high) * frac


@dataclass(frozen=True)
class Constant:
    value: float

    def rate(self, step: int) -> float:
        return self.value


LrSchedule = StepHalving | Cyclic | Range | Constant


def schedule_rate(schedule, step: int) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    return float(schedule.rate(step))
