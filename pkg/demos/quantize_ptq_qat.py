"""Quantize a trained model to 8 bits, first post-training, then with QAT.

The integer executor and the float fake-quant simulation are two separate
routes to the same output; they are compared at the end.
Run: python3 demos/quantize_ptq_qat.py
"""

import numpy as np

from qsrkit import zoo
from qsrkit.data import sample_pairs
from qsrkit.evaluation import fidelity
from qsrkit.fileformat import assert_fully_quantized, save_model
from qsrkit.quant import (
    accuracy_drop, build_plan, calibrate, calibration_images, qat_finetune, quantize_model, run_integer, simulate,
)
from qsrkit.training import Constant, TrainConfig, fit

OUT = "abpn_int8.qsr"


def main() -> None:
    train, valid = sample_pairs("train"), sample_pairs("valid")
    model, _ = fit(zoo.build("abpn", seed=0), train,
                   TrainConfig(patch_size=48, batch_size=8, iterations=200, schedule=Constant(1e-3), seed=0))

    # post-training quantization: calibrate activation ranges, then fix all parameters
    plan = build_plan(model, calibrate(model, calibration_images(train, 8)))
    q = quantize_model(plan)
    drop, _ = accuracy_drop(model, q, valid)
    print(f"float {fidelity(model, valid)[0]:.3f} dB; PTQ int8 {fidelity(q, valid)[0]:.3f} dB (drop {drop:.3f})")

    # quantization-aware fine-tuning with fake-quant in the forward pass
    plan, _ = qat_finetune(plan, train, TrainConfig(patch_size=48, batch_size=8, iterations=50,
                                                    schedule=Constant(1e-4), seed=1))
    q = quantize_model(plan)
    drop, _ = accuracy_drop(model, q, valid)
    # QAT keeps updating weights, so it can overtake a briefly trained float model (negative drop)
    print(f"PTQ+QAT int8 {fidelity(q, valid)[0]:.3f} dB (drop {drop:.3f})")

    x = valid[0].lr
    diff = np.abs(run_integer(q, x) - simulate(q, x))
    print(f"integer vs simulated output: max diff {diff.max():g} levels")

    save_model(q, OUT)
    print(f"saved {OUT}, fully quantized:", assert_fully_quantized(OUT).fully_quantized)


if __name__ == "__main__":
    main()
