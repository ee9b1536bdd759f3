"""Integer-only execution of a ``QuantizedModel``.

All arithmetic here is on integer arrays: int32 products and sums inside
convolutions, int64 for the fixed-point rescale. Floats only appear when
the caller's input pixels are rounded to codes and when the output codes
are returned.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..graph import GraphError
from .params import quantize, requantize, rounding_right_shift


def qconv2d(x: np.ndarray, x_zero_point: int, weight: np.ndarray, bias: np.ndarray, spec: T.ConvSpec,
            requant: np.ndarray, out_zero_point: int, clamp: tuple[int, int]) -> np.ndarray:
    """Quantized convolution on integer codes.

    ``x`` holds activation codes, ``weight`` int8 codes (symmetric, so no
    weight offset), ``bias`` int32 codes at the accumulator scale, and
    ``requant`` one ``[m0, shift]`` row per output channel. Returns int64
    codes clamped to ``clamp``.
    """
    if spec.stride != 1 or spec.kernel[0] != spec.kernel[1] or 2 * spec.padding != spec.kernel[0] - 1:
        raise NotImplementedError("integer conv supports stride-1 same-padded square kernels")
    b, c, h, w = x.shape
    if c != spec.in_channels:
        raise T.DimensionError(f"input has {c} channels, conv expects {spec.in_channels}", axis="channels")
    k, p, g = spec.kernel[0], spec.padding, spec.groups
    cin_g, cout_g = c // g, spec.out_channels // g
    # offset removal first so zero padding is the code for real zero
    xs = (np.asarray(x, np.int32) - np.int32(x_zero_point))
    hp, wp = h + 2 * p, w + 2 * p
    n_rows = b * hp * wp
    m = n_rows - (k - 1) * (wp + 1)
    rows = T.padded_rows(xs, p)
    acc = np.zeros((n_rows, spec.out_channels), np.int32)
    wts = np.asarray(weight, np.int32)
    for grp in range(g):
        xr = rows if g == 1 else np.ascontiguousarray(rows[:, grp * cin_g:(grp + 1) * cin_g])
        win = T.row_windows(xr, k)
        out = acc[:m, grp * cout_g:(grp + 1) * cout_g]
        for dy in range(k):
            wmat = np.ascontiguousarray(wts[grp * cout_g:(grp + 1) * cout_g, :, dy, :].transpose(2, 1, 0)
                                        ).reshape(k * cin_g, cout_g)
            out += win[dy * wp:dy * wp + m] @ wmat
    y = acc.reshape(b, hp, wp, spec.out_channels)[:, :h, :w].astype(np.int64) + np.asarray(bias, np.int64)
    y = requantize(y, requant[:, 0], requant[:, 1]) + out_zero_point
    y = np.clip(y, clamp[0], clamp[1])
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def _shape_op(n, v):
    a = n.attrs
    if n.op == "depth_to_space":
        return T.depth_to_space(v, a["block"])
    if n.op == "space_to_depth":
        return T.space_to_depth(v, a["block"])
    if n.op == "stack_repeat":
        return T.stack_repeat(v, a["n"])
    return T.nearest_upsample(v, a["factor"])


def run_codes(model, x) -> np.ndarray:
    """Execute on input pixels and return the output codes (int64)."""
    g = model.graph
    act = model.act
    x = T.as_tensor(x, np.float64)
    values: dict[str, np.ndarray] = {}
    last = {i: idx for idx, n in enumerate(g.nodes) for i in n.inputs}
    for idx, n in enumerate(g.nodes):
        try:
            if n.op == "input":
                values[n.name] = quantize(x, act[n.name])
                continue
            args = [values[i] for i in n.inputs]
            zps = [act[i].zero_point for i in n.inputs]
            zo = act[n.name].zero_point
            if n.op == "conv":
                spec = g.conv_spec(n)
                y = qconv2d(args[0], zps[0], g.params[f"{n.name}.weight"], g.params[f"{n.name}.bias"], spec,
                            model.requant[n.name], zo, model.clamps[n.name])
            elif n.op == "add":
                T._same_shape(args[0], args[1], "add")
                ia, ib, sh = (int(v) for v in model.requant[n.name])
                s = (args[0] - zps[0]) * ia + (args[1] - zps[1]) * ib
                y = rounding_right_shift(s, sh) + zo
            elif n.op == "mul":
                m0, shift = model.requant[n.name]
                y = requantize((args[0] - zps[0]) * (args[1] - zps[1]), m0, shift) + zo
            elif n.op == "concat":
                y = np.concatenate([requantize(a - z, m0, sh) + zo
                                    for a, z, (m0, sh) in zip(args, zps, model.requant[n.name])], axis=1)
            elif n.op in ("relu", "clipped_relu"):
                m0, shift = model.requant[n.name]
                y = requantize(args[0] - zps[0], m0, shift) + zo
            else:
                y = _shape_op(n, args[0])
            if n.op != "conv" and n.name in model.clamps:
                lo, hi = model.clamps[n.name]
                y = np.clip(y, lo, hi)
        except T.DimensionError as e:
            raise GraphError(f"{e} (axis: {e.axis})", n.name) from e
        values[n.name] = y
        for i in n.inputs:
            if last[i] == idx and i != g.output:
                values.pop(i, None)
    return values[g.output]


def run_integer(model, x) -> np.ndarray:
    """Output pixels (float64 holding integers) of the integer model."""
    act = model.act[model.graph.output]
    return ((run_codes(model, x) - act.zero_point) * act.scale).astype(np.float64)
