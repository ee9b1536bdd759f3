"""Patch-based training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from ..data import ImagePair, extract_patches
from ..graph import ModelGraph
from .augment import AugmentFlags, augment
from .backprop import value_and_grad
from .losses import L1, LossKind, loss_fn
from .optim import AdamState, Constant, StepHalving, adam_step, schedule_rate

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    patch_size: int = 64           # LR patch side; the HR patch is 3x this
    batch_size: int = 16
    iterations: int = 2000
    loss: LossKind = L1
    schedule: object = field(default_factory=lambda: StepHalving(1e-3, 1000))
    augmentation: AugmentFlags = field(default_factory=AugmentFlags)
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        if self.patch_size < 1 or self.batch_size < 1 or self.iterations < 0:
            raise ValueError("patch_size, batch_size must be >= 1 and iterations >= 0")


@dataclass
class LossCurve:
    steps: list[int] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)

    def append(self, step, lr, loss):
        self.steps.append(step)
        self.lrs.append(lr)
        self.losses.append(loss)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "lr", "loss"])
            for row in zip(self.steps, self.lrs, self.losses):
                w.writerow([row[0], repr(row[1]), repr(row[2])])


def sample_batch(dataset: list[ImagePair], config: TrainConfig, rng: np.random.Generator):
    lrs, hrs = [], []
    for _ in range(config.batch_size):
        pair = dataset[int(rng.integers(len(dataset)))]
        lr, hr = extract_patches(pair, config.patch_size, rng)
        lr, hr = augment(lr, hr, config.augmentation, rng)
        lrs.append(lr)
        hrs.append(hr)
    return np.concatenate(lrs).astype(np.float32), np.concatenate(hrs).astype(np.float32)


def fit(model: ModelGraph, dataset: list[ImagePair], config: TrainConfig, *, fake_quant=None,
        trainable=None) -> tuple[ModelGraph, LossCurve]:
    """Train a copy of ``model`` with Adam; returns it with the per-step loss curve.

    ``trainable`` optionally restricts updates to a subset of parameter names.
    Runs are bit-reproducible for a fixed ``config.seed``.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    opt = AdamState()
    curve = LossCurve()
    for step in range(config.iterations):
        lr_rate = schedule_rate(config.schedule, step)
        x, target = sample_batch(dataset, config, rng)
        loss, grads, _, _ = value_and_grad(model, x, loss_fn(target, config.loss), fake_quant=fake_quant,
                                          need_input_grad=False)
        if not np.isfinite(loss):
            raise TrainingDiverged(step, loss)
        if trainable is not None:
            grads = {k: v for k, v in grads.items() if k in trainable}
        if lr_rate > 0:
            adam_step(opt, model.params, grads, lr=lr_rate)
        curve.append(step, lr_rate, loss)
        if config.log_every and step % config.log_every == 0:
            log.info("step %d lr %.3g loss %.4f", step, lr_rate, loss)
    return model, curve


__all__ = ["TrainConfig", "LossCurve", "TrainingDiverged", "fit", "sample_batch", "Constant"]
