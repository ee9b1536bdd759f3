"""Train a small ABPN for x3 upscaling and compare it with bicubic.

Uses DIV2K when QSR_DIV2K_ROOT points at a DIV2K tree, otherwise a handful
of sample photos. Run: python3 demos/train_abpn.py [iterations]
"""

import sys

from qsrkit import zoo
from qsrkit.data import DatasetLayout, div2k_root, sample_pairs, scan_dataset
from qsrkit.evaluation import fidelity
from qsrkit.training import StepHalving, TrainConfig, fit


def load_data():
    root = div2k_root()
    if root is not None:
        return scan_dataset(DatasetLayout(root, "train"), 8), scan_dataset(DatasetLayout(root, "valid"), 4)
    return sample_pairs("train"), sample_pairs("valid")


def main(iterations: int = 300) -> None:
    train, valid = load_data()
    print(f"{len(train)} training pairs, {len(valid)} validation pairs")

    # an untrained ABPN is exactly nearest-neighbour upscaling
    model = zoo.build("abpn", seed=0)
    print(f"untrained ABPN: {fidelity(model, valid)[0]:.3f} dB")

    cfg = TrainConfig(patch_size=48, batch_size=8, iterations=iterations,
                      schedule=StepHalving(1e-3, max(iterations // 2, 1)), seed=0, log_every=50)
    model, curve = fit(model, train, cfg)
    print(f"loss {curve.losses[0]:.3f} -> {curve.losses[-1]:.3f}")

    p, s = fidelity(model, valid)
    b, _ = fidelity(zoo.build("bicubic"), valid)
    print(f"trained ABPN: {p:.3f} dB, SSIM {s:.4f}; bicubic {b:.3f} dB")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 300)
