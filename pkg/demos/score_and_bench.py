"""Evaluate fidelity, runtime and challenge score for a few zoo models.

The score constant is recovered from one published row and cross-checked
against the others. Runtimes are from this machine, so scores are only
comparable with each other.
Run: python3 demos/score_and_bench.py
"""

from qsrkit import zoo
from qsrkit.data import sample_pairs
from qsrkit.evaluation import bicubic_model, evaluate, reference_constant, score_table


def main() -> None:
    print(f"score constant C = {reference_constant().value:.4e}")
    for row in score_table():
        note = "  (CPU run failed, excluded)" if row["runtime_failed_on_cpu"] else ""
        print(f"  {row['team']:<22} published {row['published']}  recomputed {row['predicted']:.2f}{note}")

    valid = sample_pairs("valid")
    # untrained anchor models are exactly nearest-neighbour upscaling
    for arch in ("bicubic", "abpn", "fastsr"):
        rep = evaluate(zoo.build(arch, seed=0), valid, runs=3, reference=bicubic_model(),
                       bench_shape=(1, 3, 180, 320))
        print(f"{arch:<8} {rep.psnr_db:.3f} dB  SSIM {rep.ssim:.4f}  {rep.runtime_ms:8.1f} ms  "
              f"size {rep.model_size_bytes} B")


if __name__ == "__main__":
    main()
