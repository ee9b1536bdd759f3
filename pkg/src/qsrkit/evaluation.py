"""Fidelity metrics, the challenge score and model evaluation reports.

Conventions: metrics run on full RGB with no border cropping; dataset
averages are per image then mean; infinite PSNR is reported as 99.0 dB.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import zoo
from .resample import bicubic_upscale

PSNR_SENTINEL_DB = 99.0
LR_BENCH_SHAPE = (1, 3, 360, 640)  # 640x360 input upscaled to 1920x1080


def _as_images(a) -> np.ndarray:
    """Float64 (n, c, h, w) view of a (h, w), (c, h, w) or (n, c, h, w) array."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        return a[None, None]
    if a.ndim == 3:
        return a[None]
    if a.ndim == 4:
        return a
    raise ValueError(f"expected a 2-, 3- or 4-d image array, got shape {a.shape}")


def psnr(a, b, peak: float = 255.0) -> float:
    """10 log10(peak^2 / MSE) over all pixels and channels; ``inf`` when identical."""
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x * x / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation over the last two axes."""
    k = len(g)
    v = np.lib.stride_tricks.sliding_window_view(x, k, axis=-2) @ g
    return np.lib.stride_tricks.sliding_window_view(v, k, axis=-1) @ g


def ssim(a, b, peak: float = 255.0, window: int = 11, sigma: float = 1.5) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window, averaged over pixels, then channels and images."""
    a, b = _as_images(a), _as_images(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[-2:]) < window:
        raise ValueError(f"ssim needs spatial size >= {window}, got {a.shape[-2:]}")
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    g = gaussian_window(window, sigma)
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a ** 2
    sbb = _filter_valid(b * b, g) - mu_b ** 2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    per_channel = (num / den).mean(axis=(-2, -1))
    return float(per_channel.mean())


# --- challenge score ------------------------------------------------------

@dataclass(frozen=True)
class ScoreConstant:
    value: float

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("score constant must be positive")


def challenge_score(psnr_db: float, runtime_ms: float, c) -> float:
    """``2**(2 psnr) / (C runtime)``, evaluated in the log domain to avoid overflow."""
    if not runtime_ms > 0:
        raise ValueError("runtime must be positive")
    cv = c.value if isinstance(c, ScoreConstant) else float(c)
    if not cv > 0:
        raise ValueError("score constant must be positive")
    return float(np.exp2(2.0 * psnr_db - np.log2(cv) - np.log2(runtime_ms)))


class ScoreRow(NamedTuple):
    team: str
    psnr: float
    ssim: float
    runtime_ms: float | None  # NPU runtime
    score: float | None
    cpu_failed: bool = False
    size_kb: float | None = None


# Published results table: (team, PSNR, SSIM, NPU runtime, final score, CPU run failed, size KB)
SCORE_TABLE = (
    ScoreRow("Aselsan Research", 29.58, 0.86, 44.85, 51.02, False, 67),
    ScoreRow("Noah_TerminalVision", 29.41, 0.8537, 38.32, 47.18, False, 109),
    ScoreRow("ALONG", 29.52, 0.8607, 62.25, 33.82, False, 30),
    ScoreRow("A+ regression", 29.32, 0.8520, None, None),
    ScoreRow("EmbededAI", 28.82, 0.8428, 76.61, 10.41, False, 82),
    ScoreRow("mju_gogogo", 28.92, 0.8486, 718.0, 1.28, True, 940),
    ScoreRow("Bicubic Upscaling", 28.26, 0.8277, None, None),
    ScoreRow("221B", 25.44, 0.729, 238.43, 0.03, True, 175),
    ScoreRow("svnit_ntnu", 19.3, 0.7061, 78.84, 0.00, False, 8),
    ScoreRow("CVML", 19.5, 0.7462, 90.20, 0.00, False, 10),
    ScoreRow("TieGuoDun Team", 16.19, 0.6654, 913.96, 0.00, True, 636),
    ScoreRow("MCG", 29.87, 0.8686, 36.89, 92.72, False, 53),
)


def score_row(team: str) -> ScoreRow:
    for r in SCORE_TABLE:
        if r.team == team:
            return r
    raise KeyError(team)


@dataclass(frozen=True)
class ScoreCalibration:
    constant: ScoreConstant
    residuals: tuple[float, ...]  # log2(C_row / C) per input row


def calibrate_score_constant(rows) -> ScoreCalibration:
    """Solve ``C = 2**(2 psnr) / (score runtime)`` per ``(psnr, runtime, score)`` row; geometric mean."""
    rows = [tuple(r) for r in rows]
    if not rows:
        raise ValueError("need at least one (psnr, runtime, score) row")
    logs = []
    for p, rt, s in rows:
        if not (s > 0 and rt > 0):
            raise ValueError(f"row {(p, rt, s)} needs positive score and runtime")
        logs.append(2.0 * p - np.log2(s) - np.log2(rt))
    mean = float(np.mean(logs))
    return ScoreCalibration(ScoreConstant(float(np.exp2(mean))), tuple(float(v - mean) for v in logs))


def reference_constant() -> ScoreConstant:
    """C solved from the challenge winner's row."""
    r = score_row("Aselsan Research")
    return calibrate_score_constant([(r.psnr, r.runtime_ms, r.score)]).constant


def valid_score_rows(min_psnr: float = 25.0) -> list[ScoreRow]:
    """Scored rows with PSNR >= ``min_psnr`` whose runtime measurement did not fail."""
    return [r for r in SCORE_TABLE
            if r.score is not None and r.psnr >= min_psnr and not r.cpu_failed]


def score_table(c: ScoreConstant | None = None) -> list[dict]:
    """Predicted vs published final score for every scored row."""
    c = c or reference_constant()
    out = []
    for r in SCORE_TABLE:
        if r.score is None:
            continue
        pred = challenge_score(r.psnr, r.runtime_ms, c)
        rel = (pred - r.score) / r.score if r.score else None
        out.append({"team": r.team, "psnr_db": r.psnr, "runtime_ms": r.runtime_ms, "published": r.score,
                    "predicted": pred, "rel_error": rel, "runtime_failed_on_cpu": r.cpu_failed})
    return out


# --- reports --------------------------------------------------------------

@dataclass
class EvalReport:
    psnr_db: float
    ssim: float
    runtime_ms: float
    delta_psnr_db: float | None = None
    delta_ssim: float | None = None
    score: float | None = None
    model_size_bytes: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if not np.isfinite(d["psnr_db"]):
            d["psnr_db"] = PSNR_SENTINEL_DB
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def table(self) -> str:
        labels = {"psnr_db": "PSNR (dB)", "ssim": "SSIM", "runtime_ms": "Runtime (ms)",
                  "delta_psnr_db": "dPSNR (dB)", "delta_ssim": "dSSIM", "score": "Score",
                  "model_size_bytes": "Size (bytes)"}
        lines = []
        for k, v in self.to_dict().items():
            if v is None:
                text = "n/a"
            elif isinstance(v, int):
                text = str(v)
            else:
                text = f"{v:.4f}"
            lines.append(f"{labels[k]:<14} {text}")
        return "\n".join(lines)


def run_model(model, x) -> np.ndarray:
    """Output of a float graph, quantized model or callable on (1, 3, h, w) pixels."""
    if isinstance(model, zoo.ModelGraph):
        return zoo.forward(model, x)
    return np.asarray(model(x))


def fidelity(model, dataset) -> tuple[float, float]:
    """Per-image PSNR and SSIM of ``model`` outputs (clipped and rounded to 8 bits), averaged in id order."""
    pairs = sorted(dataset, key=lambda p: p.id)
    if not pairs:
        raise ValueError("dataset is empty")
    ps, ss = [], []
    for pair in pairs:
        sr = np.clip(np.rint(run_model(model, pair.lr)), 0, 255)
        ps.append(psnr(sr, pair.hr))
        ss.append(ssim(sr, pair.hr))
    return float(np.mean(ps)), float(np.mean(ss))


def measure_runtime_ms(model, runs: int = 3, shape=LR_BENCH_SHAPE, seed: int = 0) -> float:
    """Median wall time of ``runs`` forward passes after one warm-up pass."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    x = np.random.default_rng(seed).integers(0, 256, shape).astype(np.float32)
    run_model(model, x)
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        run_model(model, x)
        times.append((time.perf_counter() - t0) * 1000.0)
    return float(np.median(times))


def model_size(model) -> int | None:
    return getattr(model, "model_size_bytes", None)


def evaluate(model, dataset, runs: int = 3, *, reference=None, constant: ScoreConstant | None = None,
             bench_shape=LR_BENCH_SHAPE) -> EvalReport:
    """Fidelity, runtime and score of ``model``; ``reference`` (the float model) fills the drop fields."""
    dataset = list(dataset)
    p, s = fidelity(model, dataset)
    rt = measure_runtime_ms(model, runs, bench_shape) if runs > 0 else float("nan")
    dp = ds = None
    if reference is not None:
        rp, rs = fidelity(reference, dataset)
        dp, ds = rp - p, rs - s
    score = None
    if np.isfinite(rt):
        score = challenge_score(min(p, PSNR_SENTINEL_DB), rt, constant or reference_constant())
    return EvalReport(p, s, rt, dp, ds, score, model_size(model))


def bicubic_model():
    """Callable bicubic x3 baseline."""
    return zoo.BicubicBaseline()


__all__ = [
    "EvalReport", "PSNR_SENTINEL_DB", "SCORE_TABLE", "ScoreCalibration", "ScoreConstant", "ScoreRow",
    "bicubic_model", "bicubic_upscale", "calibrate_score_constant", "challenge_score", "evaluate", "fidelity",
    "measure_runtime_ms", "psnr", "reference_constant", "score_table", "ssim", "valid_score_rows",
]
