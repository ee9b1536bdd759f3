"""Quantization plans, fake-quant hooks and the integer model container.

A plan fixes the activation parameters of a fused float graph. The same
plan drives three things: the fake-quant hooks used for QAT and for the
float64 reference simulation, and the conversion to a ``QuantizedModel``
whose weights, biases and requantization tables are all integers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..graph import ACTIVATIONS, SHAPE_OPS, ModelGraph, forward
from .fuse import fuse_activations, output_producer, stats_key
from .params import (
    INT32_MAX, INT32_MIN, PIXEL_QPARAMS, QuantizationError, QuantParams, compute_qparams, dequantize, fake_quant,
    fake_quant_mask, quantize, quantize_multiplier, round_half_away, weight_qparams,
)

# int32 accumulation of 8-bit products stays exact while kernel_area * cin_per_group <= 2**15
MAX_ACCUMULATION = 2 ** 15
REQUANT_OPS = frozenset({"conv", "add", "mul", "concat"}) | ACTIVATIONS


@dataclass
class QuantPlan:
    """Fused float graph plus the output parameters of every node."""

    graph: ModelGraph
    act: dict[str, QuantParams]

    def input_qparams(self, node) -> list[QuantParams]:
        return [self.act[i] for i in node.inputs]


def build_plan(graph: ModelGraph, stats) -> QuantPlan:
    """Fuse activations and derive per-tensor unsigned parameters from calibration ``stats``.

    Shape ops inherit their input's parameters. The graph input and the
    final producer are pinned to scale 1, zero point 0 so 8-bit pixel codes
    pass straight in and out.
    """
    fused = fuse_activations(graph) if not _is_fused(graph) else graph.copy()
    pinned = output_producer(fused).name
    act: dict[str, QuantParams] = {}
    for n in fused.nodes:
        if n.op == "input" or n.name == pinned:
            act[n.name] = PIXEL_QPARAMS
        elif n.op in SHAPE_OPS:
            act[n.name] = act[n.inputs[0]]
        else:
            key = stats_key(n)
            if key not in stats:
                raise QuantizationError(f"no calibration range for node {key!r}")
            act[n.name] = compute_qparams(*stats[key])
    return QuantPlan(fused, act)


def _is_fused(graph: ModelGraph) -> bool:
    return any("act_node" in n.attrs for n in graph.nodes)


def quantize_bias(b: np.ndarray, s_in: float, s_w: np.ndarray) -> np.ndarray:
    """int32 bias codes at scale ``s_in * s_w`` (per output channel)."""
    q = round_half_away(np.asarray(b, np.float64) / (s_in * s_w))
    return np.clip(q, INT32_MIN, INT32_MAX).astype(np.int64)


def quantized_conv_params(w: np.ndarray, b: np.ndarray, s_in: float):
    """``(q_weight, weight_qparams, q_bias)`` for a float conv whose input has scale ``s_in``."""
    wq = weight_qparams(w)
    return quantize(w, wq, axis=0), wq, quantize_bias(b, s_in, wq.scale)


def output_clamp(node, qp: QuantParams) -> tuple[int, int]:
    """Integer output range after any fused or standalone activation."""
    lo, hi = qp.qmin, qp.qmax
    act = node.op if node.op in ACTIVATIONS else node.attrs.get("act")
    if act in ACTIVATIONS:
        lo = max(lo, qp.zero_point)
    if act == "clipped_relu":
        cap = node.attrs.get("max", 255.0) if node.op == "clipped_relu" else node.attrs["act_max"]
        hi = min(hi, int(round_half_away(cap / qp.scale)) + qp.zero_point)
    return int(lo), int(hi)


class FakeQuantHooks:
    """Forward hooks simulating the integer model in floating point.

    Node outputs are rounded onto their activation grid; conv weights are
    quantized per output channel and biases at the accumulator scale. With
    ``fixed`` (conv name -> (weight, bias)) those parameters are used as is.
    Out-of-range masks give the straight-through gradient.
    """

    def __init__(self, act: dict[str, QuantParams], fixed: dict | None = None):
        self.act = act
        self.fixed = fixed

    def activation(self, node, y):
        if node.op in SHAPE_OPS:
            return y, None
        qp = self.act[node.name]
        return fake_quant(y, qp), fake_quant_mask(y, qp)

    def conv_params(self, node, w, b, dtype):
        if self.fixed is not None:
            fw, fb = self.fixed[node.name]
            return fw.astype(dtype), fb.astype(dtype)
        s_in = self.act[node.inputs[0]].scale
        qw, wq, qb = quantized_conv_params(w, b, s_in)
        return dequantize(qw, wq).astype(dtype), (qb * (s_in * wq.scale)).astype(dtype)


def plan_hooks(plan: QuantPlan) -> FakeQuantHooks:
    return FakeQuantHooks(plan.act)


@dataclass
class QuantizedModel:
    """Integer-only model: int8 weights, int32 biases and fixed-point requantization tables.

    ``graph.params`` holds the integer arrays. ``requant`` tables per node:
    conv ``(out, 2)`` rows of ``[m0, shift]``; add ``[i_a, i_b, n]`` sharing
    one shift; mul and standalone activations ``[m0, shift]``; concat one
    ``[m0, shift]`` row per input.
    """

    graph: ModelGraph
    act: dict[str, QuantParams]
    weight_qparams: dict[str, QuantParams]
    requant: dict[str, np.ndarray]
    clamps: dict[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.graph.name

    @property
    def scale(self) -> int:
        return self.graph.scale

    @property
    def n_params(self) -> int:
        return self.graph.n_params

    @property
    def model_size_bytes(self) -> int:
        return self.graph.n_params

    def float_params(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Real-valued (weight, bias) of every conv, exactly as the integers represent them."""
        out = {}
        for n in self.graph.nodes:
            if n.op != "conv":
                continue
            wq = self.weight_qparams[n.name]
            s_in = self.act[n.inputs[0]].scale
            w = dequantize(self.graph.params[f"{n.name}.weight"], wq)
            b = self.graph.params[f"{n.name}.bias"].astype(np.float64) * (s_in * wq.scale)
            out[n.name] = (w, b)
        return out

    def __call__(self, x) -> np.ndarray:
        from .integer import run_integer

        return run_integer(self, x)


def _add_multipliers(ma: float, mb: float) -> np.ndarray:
    """Integer multipliers ``[i_a, i_b, n]`` with ``m ~= i / 2**n`` sharing the largest usable ``n``."""
    m0, shift = quantize_multiplier(max(ma, mb))
    n = 31 + shift
    ia = int(round_half_away(ma * 2.0 ** n))
    ib = int(round_half_away(mb * 2.0 ** n))
    return np.array([ia, ib, n], dtype=np.int64)


def quantize_model(plan: QuantPlan) -> QuantizedModel:
    """Convert a plan's fused float graph into an integer model with the plan's activation parameters."""
    g = plan.graph
    params: dict[str, np.ndarray] = {}
    wqs: dict[str, QuantParams] = {}
    requant: dict[str, np.ndarray] = {}
    clamps: dict[str, tuple[int, int]] = {}
    act = plan.act
    for n in g.nodes:
        if n.op not in REQUANT_OPS:
            continue
        s_out = act[n.name].scale
        s_ins = [act[i].scale for i in n.inputs]
        if n.op == "conv":
            spec = g.conv_spec(n)
            depth = spec.kernel[0] * spec.kernel[1] * spec.in_channels // spec.groups
            if depth > MAX_ACCUMULATION:
                raise QuantizationError(
                    f"node {n.name}: {depth} products per output exceed the int32 accumulator bound "
                    f"{MAX_ACCUMULATION}")
            qw, wq, qb = quantized_conv_params(g.params[f"{n.name}.weight"], g.params[f"{n.name}.bias"],
                                               s_ins[0])
            params[f"{n.name}.weight"] = qw.astype(np.int8)
            params[f"{n.name}.bias"] = qb.astype(np.int32)
            wqs[n.name] = wq
            requant[n.name] = np.array([quantize_multiplier(s_ins[0] * s / s_out) for s in wq.scale],
                                       dtype=np.int64)
        elif n.op == "add":
            requant[n.name] = _add_multipliers(s_ins[0] / s_out, s_ins[1] / s_out)
        elif n.op == "mul":
            requant[n.name] = np.array(quantize_multiplier(s_ins[0] * s_ins[1] / s_out), dtype=np.int64)
        elif n.op == "concat":
            requant[n.name] = np.array([quantize_multiplier(s / s_out) for s in s_ins], dtype=np.int64)
        else:
            requant[n.name] = np.array(quantize_multiplier(s_ins[0] / s_out), dtype=np.int64)
        clamps[n.name] = output_clamp(n, act[n.name])
    qgraph = ModelGraph(g.name, [type(n)(n.name, n.op, n.inputs, dict(n.attrs)) for n in g.nodes], params,
                        g.output, g.scale, dict(g.meta, quantized=True))
    return QuantizedModel(qgraph, dict(act), wqs, requant, clamps)


def simulate(model, x) -> np.ndarray:
    """Float64 fake-quant reference for a ``QuantizedModel`` or a ``QuantPlan``.

    This path shares no arithmetic with the integer executor: convs run in
    float64 on dequantized parameters and each node output is rounded onto
    its grid.
    """
    if isinstance(model, QuantizedModel):
        hooks = FakeQuantHooks(model.act, fixed=model.float_params())
        graph = model.graph
    elif isinstance(model, QuantPlan):
        hooks = FakeQuantHooks(model.act)
        graph = model.graph
    else:
        raise TypeError("simulate expects a QuantizedModel or QuantPlan")
    return forward(graph, x, fake_quant=hooks, dtype=np.float64)
