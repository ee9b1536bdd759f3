"""Activation range observation over calibration images."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..graph import ModelGraph, forward
from .params import QuantizationError


@dataclass
class CalibrationStats:
    """Per-node observed output ranges; ``momentum`` switches from running min/max to an EMA."""

    momentum: float | None = None
    ranges: dict[str, tuple[float, float]] = field(default_factory=dict)
    count: int = 0

    def observe(self, name: str, y: np.ndarray) -> None:
        # ranges always contain 0 so it stays exactly representable
        lo, hi = min(float(y.min()), 0.0), max(float(y.max()), 0.0)
        if name not in self.ranges:
            self.ranges[name] = (lo, hi)
            return
        plo, phi = self.ranges[name]
        if self.momentum is None:
            self.ranges[name] = (min(plo, lo), max(phi, hi))
        else:
            m = self.momentum
            self.ranges[name] = (m * plo + (1 - m) * lo, m * phi + (1 - m) * hi)

    def __getitem__(self, name: str) -> tuple[float, float]:
        return self.ranges[name]

    def __contains__(self, name: str) -> bool:
        return name in self.ranges


class _Observer:
    def __init__(self, stats: CalibrationStats):
        self.stats = stats

    def activation(self, node, y):
        self.stats.observe(node.name, y)
        return y, None

    def conv_params(self, node, w, b, dtype):
        return w.astype(dtype, copy=False), b.astype(dtype, copy=False)


def calibrate(graph: ModelGraph, images, method: str = "minmax", momentum: float = 0.99) -> CalibrationStats:
    """Run ``graph`` over ``images`` (each (1, 3, h, w) or (3, h, w)) and record every node's output range.

    ``method`` is ``"minmax"`` (running extremes) or ``"ema"`` (exponential
    moving average of per-image extremes).
    """
    if method not in ("minmax", "ema"):
        raise QuantizationError(f"unknown calibration method {method!r}")
    images = list(images)
    if not images:
        raise QuantizationError("calibration needs at least one image")
    stats = CalibrationStats(momentum if method == "ema" else None)
    obs = _Observer(stats)
    for img in images:
        x = np.asarray(img, dtype=np.float32)
        if x.ndim == 3:
            x = x[None]
        forward(graph, x, fake_quant=obs)
        stats.count += 1
    return stats
