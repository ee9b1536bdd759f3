"""Command-line front end: ``qsrkit {train,quantize,fold,eval,bench,score-table}``.

Exit codes: 0 success, 1 internal error, 2 user or configuration error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import zoo
from .data import DatasetError, DatasetLayout, ImageFormatError, scan_dataset
from .evaluation import EvalReport, evaluate, reference_constant, run_model, score_table
from .fileformat import FormatError, assert_fully_quantized, load_model, save_model
from .graph import GraphError, ModelGraph
from .quant import (
    QuantizationError, accuracy_drop, build_plan, calibrate, calibration_images, qat_finetune, quantize_model,
)
from .reparam import FoldError, fold_model
from .training import LossKind, StepHalving, TrainConfig, fit

log = logging.getLogger("qsrkit")

CONFIG_KEYS = {"arch", "data", "out", "seed", "iters", "batch", "patch", "loss", "lr", "calib_images", "runs",
               "mode", "width", "height", "limit", "model", "reference"}
DEFAULTS = {"seed": 0, "iters": None, "batch": 16, "patch": 64, "loss": "l1", "lr": 1e-3, "calib_images": 8,
            "runs": 3, "mode": "ptq", "width": 640, "height": 360, "limit": None}
SCORE_TOLERANCE = 0.015
TRAIN_ITERS, QAT_ITERS = 2000, 200


class UsageError(Exception):
    """Bad flags, config or paths (exit code 2)."""


def _threads():
    n = os.environ.get("QSR_THREADS")
    if not n:
        return contextlib.nullcontext()
    try:
        limit = int(n)
    except ValueError:
        raise UsageError(f"QSR_THREADS must be an integer, got {n!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(limit, 1))


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"config {p} is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"config {p} must be a JSON object")
    unknown = sorted(set(cfg) - CONFIG_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return cfg


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags (flags win)."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        opts.update(load_config(args.config))
    for k, v in vars(args).items():
        if k in CONFIG_KEYS and v is not None:
            opts[k] = v
    return opts


def _existing_dir(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} directory not found: {p}")
    return p


def _existing_file(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} path is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {p}")
    return p


def _out_path(path, what: str = "out") -> Path:
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _dataset(root: Path, split: str, limit=None):
    layout = DatasetLayout(root, split)
    if not layout.exists():
        if split == "valid":
            return None
        raise UsageError(f"no DIV2K-style HR directory under {root} (expected {layout.hr_dir})")
    return scan_dataset(layout, limit)


def _eval_pairs(root: Path, limit=None):
    return _dataset(root, "valid", limit) or _dataset(root, "train", limit)


def _load_any(opts: dict):
    """Model from ``model`` file, or a freshly built ``arch`` (bicubic allowed)."""
    if opts.get("model"):
        return load_model(_existing_file(opts["model"], "model"))
    if opts.get("arch"):
        return zoo.build(opts["arch"], seed=opts["seed"])
    raise UsageError("give a model file or --arch")


# --- subcommands ----------------------------------------------------------

def cmd_train(opts: dict) -> int:
    arch = opts.get("arch") or "abpn"
    if arch == "bicubic":
        raise UsageError("the bicubic baseline has no parameters to train")
    root = _existing_dir(opts.get("data"), "data")
    out_dir = Path(opts.get("out") or "run")
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs = _dataset(root, "train", opts["limit"])
    model = zoo.build(arch, seed=opts["seed"])
    iters = int(opts["iters"] if opts["iters"] is not None else TRAIN_ITERS)
    cfg = TrainConfig(patch_size=int(opts["patch"]), batch_size=int(opts["batch"]), iterations=iters,
                      loss=LossKind.parse(opts["loss"]),
                      schedule=StepHalving(float(opts["lr"]), max(iters // 2, 1)), seed=int(opts["seed"]),
                      log_every=max(iters // 20, 1))
    trained, curve = fit(model, pairs, cfg)
    model_path = out_dir / "model.qsr"
    save_model(trained, model_path)
    curve.write_csv(out_dir / "losses.csv")
    first = curve.losses[0] if curve.losses else float("nan")
    last = curve.losses[-1] if curve.losses else float("nan")
    print(json.dumps({"model": str(model_path), "losses": str(out_dir / "losses.csv"), "iterations": iters,
                      "initial_loss": first, "final_loss": last}))
    return 0


def cmd_quantize(opts: dict) -> int:
    model_path = _existing_file(opts.get("model"), "model")
    root = _existing_dir(opts.get("data"), "data")
    out = _out_path(opts.get("out"))
    mode = opts["mode"]
    if mode not in ("ptq", "qat"):
        raise UsageError(f"--mode must be ptq or qat, got {mode!r}")
    fp = load_model(model_path)
    if not isinstance(fp, ModelGraph):
        raise UsageError(f"{model_path} is already quantized")
    train = _dataset(root, "train", opts["limit"])
    calib = calibration_images(train, int(opts["calib_images"]))
    plan = build_plan(fp, calibrate(fp, calib))
    q = quantize_model(plan)
    valid = _eval_pairs(root, opts["limit"])
    report = {"mode": mode}
    dp, ds = accuracy_drop(fp, q, valid)
    report.update(ptq_delta_psnr_db=dp, ptq_delta_ssim=ds)
    if mode == "qat":
        iters = int(opts["iters"] if opts["iters"] is not None else QAT_ITERS)
        cfg = TrainConfig(patch_size=int(opts["patch"]), batch_size=int(opts["batch"]), iterations=iters,
                          loss=LossKind.parse(opts["loss"]), schedule=StepHalving(float(opts["lr"]) * 0.1,
                                                                                 max(iters // 2, 1)),
                          seed=int(opts["seed"]))
        plan, _ = qat_finetune(plan, train, cfg)
        q = quantize_model(plan)
        dp, ds = accuracy_drop(fp, q, valid)
    report.update(delta_psnr_db=dp, delta_ssim=ds, out=str(out))
    save_model(q, out)
    assert_fully_quantized(out)
    print(json.dumps(report))
    return 0


def cmd_fold(opts: dict) -> int:
    model_path = _existing_file(opts.get("model"), "model")
    out = _out_path(opts.get("out"))
    g = load_model(model_path)
    if not isinstance(g, ModelGraph):
        raise UsageError("only float models can be folded")
    folded = fold_model(g)
    save_model(folded, out)
    print(json.dumps({"out": str(out), "nodes": len(folded.nodes), "params": folded.n_params}))
    return 0


def cmd_eval(opts: dict) -> int:
    root = _existing_dir(opts.get("data"), "data")
    model = _load_any(opts)
    ref = load_model(_existing_file(opts["reference"], "reference")) if opts.get("reference") else None
    pairs = _eval_pairs(root, opts["limit"])
    report: EvalReport = evaluate(model, pairs, int(opts["runs"]), reference=ref)
    out = opts.get("out")
    if out:
        _out_path(out).write_text(report.to_json())
    print(report.to_json())
    print(report.table())
    return 0


def cmd_bench(opts: dict) -> int:
    model = _load_any(opts)
    runs = int(opts.get("runs") or 20)
    if runs < 1:
        raise UsageError("--runs must be >= 1")
    w, h = int(opts["width"]), int(opts["height"])
    x = np.random.default_rng(0).integers(0, 256, (1, 3, h, w)).astype(np.float32)
    y = run_model(model, x)  # warm-up
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        run_model(model, x)
        times.append((time.perf_counter() - t0) * 1000.0)
    result = {
        "model": getattr(model, "name", "model"),
        "input": [w, h], "output": [int(y.shape[-1]), int(y.shape[-2])],
        "runs": runs, "median_ms": float(np.median(times)), "p90_ms": float(np.percentile(times, 90)),
        "host": {"machine": platform.machine(), "processor": platform.processor(), "system": platform.system(),
                 "python": platform.python_version(), "cpus": os.cpu_count(),
                 "threads": os.environ.get("QSR_THREADS")},
        "label": "host CPU - not comparable to the published NPU runtimes",
    }
    print(json.dumps(result, indent=2))
    return 0


def cmd_score_table(opts: dict) -> int:
    c = reference_constant()
    rows = score_table(c)
    print(f"C = {c.value:.6e} (solved from the winner's row)")
    print(f"{'team':<22}{'PSNR':>8}{'ms':>10}{'published':>11}{'predicted':>11}{'rel.err':>9}")
    for r in rows:
        rel = r["rel_error"]
        flag = ""
        if rel is not None and abs(rel) > SCORE_TOLERANCE:
            flag = "  > 1.5%"
        if r["runtime_failed_on_cpu"]:
            flag += "  (CPU run failed)"
        rel_s = f"{100 * rel:+.2f}%" if rel is not None else "n/a"
        print(f"{r['team']:<22}{r['psnr_db']:>8.2f}{r['runtime_ms']:>10.2f}{r['published']:>11.2f}"
              f"{r['predicted']:>11.2f}{rel_s:>9}{flag}")
    return 0


COMMANDS = {"train": cmd_train, "quantize": cmd_quantize, "fold": cmd_fold, "eval": cmd_eval,
            "bench": cmd_bench, "score-table": cmd_score_table}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qsrkit", description="8-bit x3 super-resolution toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, model_arg=False):
        sp.add_argument("--config", help="JSON file of defaults; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--limit", type=int, help="use at most N images per split")
        if model_arg:
            sp.add_argument("model", nargs="?", help="QSRKIT01 model file")

    def train_flags(sp):
        sp.add_argument("--iters", type=int)
        sp.add_argument("--batch", type=int)
        sp.add_argument("--patch", type=int, help="LR patch side")
        sp.add_argument("--loss", choices=["l1", "l2", "charbonnier"])
        sp.add_argument("--lr", type=float, help="initial learning rate")

    sp = sub.add_parser("train", help="train a model on a DIV2K-style tree")
    common(sp)
    sp.add_argument("--arch", choices=zoo.ARCHITECTURES)
    sp.add_argument("--data")
    sp.add_argument("--out", help="output directory (model.qsr, losses.csv)")
    train_flags(sp)

    sp = sub.add_parser("quantize", help="8-bit PTQ or PTQ+QAT of a float model")
    common(sp, model_arg=True)
    sp.add_argument("--data")
    sp.add_argument("--out")
    sp.add_argument("--mode", choices=["ptq", "qat"])
    sp.add_argument("--calib-images", dest="calib_images", type=int)
    train_flags(sp)

    sp = sub.add_parser("fold", help="fold re-parameterizable branches into plain convs")
    common(sp, model_arg=True)
    sp.add_argument("--out")

    sp = sub.add_parser("eval", help="PSNR/SSIM/runtime/score report")
    common(sp, model_arg=True)
    sp.add_argument("--arch", choices=zoo.ARCHITECTURES)
    sp.add_argument("--data")
    sp.add_argument("--runs", type=int)
    sp.add_argument("--reference", help="float model for the quantization drop fields")
    sp.add_argument("--out", help="also write the JSON report here")

    sp = sub.add_parser("bench", help="wall-time a 640x360 -> 1920x1080 forward pass")
    common(sp, model_arg=True)
    sp.add_argument("--arch", choices=zoo.ARCHITECTURES)
    sp.add_argument("--runs", type=int)
    sp.add_argument("--width", type=int)
    sp.add_argument("--height", type=int)

    sp = sub.add_parser("score-table", help="reproduce the published final-score column")
    common(sp)
    return p


USER_ERRORS = (UsageError, DatasetError, ImageFormatError, FormatError, FoldError, QuantizationError,
               FileNotFoundError)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        opts = resolve(args)
        if args.command == "bench" and args.runs is None and "runs" not in _config_keys(args):
            opts["runs"] = 20
        with _threads():
            return COMMANDS[args.command](opts)
    except USER_ERRORS as e:
        print(f"qsrkit: error: {e}", file=sys.stderr)
        return 2
    except GraphError as e:
        print(f"qsrkit: model error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"qsrkit: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


def _config_keys(args) -> set:
    return set(load_config(args.config)) if getattr(args, "config", None) else set()


if __name__ == "__main__":
    sys.exit(main())
