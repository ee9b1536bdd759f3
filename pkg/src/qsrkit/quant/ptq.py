"""Post-training quantization and quantization-aware fine-tuning."""

from __future__ import annotations

import numpy as np

from ..graph import ModelGraph
from ..training import TrainConfig, fit
from ..training.loop import LossCurve
from .calibrate import CalibrationStats, calibrate
from .model import QuantizedModel, QuantPlan, build_plan, plan_hooks, quantize_model


def quantize_model_ptq(model: ModelGraph, stats: CalibrationStats) -> QuantizedModel:
    """Fuse, plan from calibration ranges and convert to an integer model."""
    return quantize_model(build_plan(model, stats))


def qat_finetune(plan: QuantPlan, dataset, config: TrainConfig) -> tuple[QuantPlan, LossCurve]:
    """Fine-tune the plan's float weights under fake quantization.

    Activation parameters stay frozen at their calibrated values, so the
    tuned plan converts with ``quantize_model`` exactly as it was trained.
    """
    graph, curve = fit(plan.graph, dataset, config, fake_quant=plan_hooks(plan))
    return QuantPlan(graph, dict(plan.act)), curve


def ptq_qat(model: ModelGraph, calib_images, dataset, config: TrainConfig | None = None,
            method: str = "minmax") -> tuple[QuantizedModel, QuantPlan]:
    """Calibrate, plan, optionally QAT fine-tune, and convert."""
    plan = build_plan(model, calibrate(model, calib_images, method))
    if config is not None and config.iterations > 0:
        plan, _ = qat_finetune(plan, dataset, config)
    return quantize_model(plan), plan


def accuracy_drop(fp, q, dataset) -> tuple[float, float]:
    """``(PSNR_float - PSNR_quant, SSIM_float - SSIM_quant)`` averaged per image."""
    from ..evaluation import fidelity

    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    p_fp, s_fp = fidelity(fp, dataset)
    p_q, s_q = fidelity(q, dataset)
    return p_fp - p_q, s_fp - s_q


def calibration_images(dataset, n: int = 8) -> list[np.ndarray]:
    """LR inputs of the first ``n`` pairs (sorted by id)."""
    return [p.lr for p in sorted(dataset, key=lambda p: p.id)[:n]]
