"""8-bit quantization: calibration, PTQ, QAT hooks and the integer-only executor."""

from .calibrate import CalibrationStats, calibrate
from .fuse import fuse_activations
from .integer import qconv2d, run_codes, run_integer
from .model import (
    MAX_ACCUMULATION, FakeQuantHooks, QuantizedModel, QuantPlan, build_plan, plan_hooks, quantize_model, simulate,
)
from .params import (
    PIXEL_QPARAMS, QuantizationError, QuantParams, compute_qparams, dequantize, fake_quant, fake_quant_backward,
    fake_quant_mask, quantize, quantize_multiplier, requantize, round_half_away, weight_qparams,
)
from .ptq import accuracy_drop, calibration_images, ptq_qat, qat_finetune, quantize_model_ptq

requantize_multiplier = quantize_multiplier

__all__ = [
    "CalibrationStats", "FakeQuantHooks", "MAX_ACCUMULATION", "PIXEL_QPARAMS", "QuantParams", "QuantPlan",
    "QuantizationError", "QuantizedModel", "accuracy_drop", "build_plan", "calibrate", "calibration_images",
    "compute_qparams", "dequantize", "fake_quant", "fake_quant_backward", "fake_quant_mask", "fuse_activations",
    "plan_hooks", "ptq_qat", "qat_finetune", "qconv2d", "quantize", "quantize_model", "quantize_model_ptq",
    "quantize_multiplier", "requantize", "requantize_multiplier", "round_half_away", "run_codes", "run_integer",
    "simulate", "weight_qparams",
]
