from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import DimensionError

DEFAULT_CHARBONNIER_EPS = 1e-3


@dataclass(frozen=True)
class LossKind:
    """One of ``l1``, ``l2`` or ``charbonnier`` (with its ``eps``)."""

    variant: str = "l1"
    eps: float = DEFAULT_CHARBONNIER_EPS

    def __post_init__(self):
        if self.variant not in ("l1", "l2", "charbonnier"):
            raise ValueError(f"unknown loss {self.variant!r}")
        if self.variant == "charbonnier" and not self.eps > 0:
            raise ValueError("Charbonnier eps must be > 0")

    @classmethod
    def parse(cls, name: str, eps: float = DEFAULT_CHARBONNIER_EPS) -> "LossKind":
        return cls(name.lower(), eps)


L1 = LossKind("l1")
L2 = LossKind("l2")
CHARBONNIER = LossKind("charbonnier")


def _diff(pred, target):
    if pred.shape != target.shape:
        raise DimensionError(f"loss: prediction {pred.shape} and target {target.shape} differ")
    return pred.astype(np.float64) - target.astype(np.float64)


def loss_forward(pred: np.ndarray, target: np.ndarray, kind: LossKind = L1) -> float:
    """Mean element-wise loss."""
    d = _diff(pred, target)
    if kind.variant == "l1":
        return float(np.mean(np.abs(d)))
    if kind.variant == "l2":
        return float(np.mean(d * d))
    return float(np.mean(np.sqrt(d * d + kind.eps * kind.eps)))


def loss_backward(pred: np.ndarray, target: np.ndarray, kind: LossKind = L1) -> np.ndarray:
    d = _diff(pred, target)
    n = d.size
    if kind.variant == "l1":
        g = np.sign(d)
    elif kind.variant == "l2":
        g = 2.0 * d
    else:
        g = d / np.sqrt(d * d + kind.eps * kind.eps)
    return (g / n).astype(pred.dtype)


def loss_fn(target: np.ndarray, kind: LossKind = L1):
    """Closure returning ``(value, grad)`` for use with ``value_and_grad``."""
    def fn(pred):
        return loss_forward(pred, target, kind), loss_backward(pred, target, kind)
    return fn
