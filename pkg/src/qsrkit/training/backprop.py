"""Reverse-mode gradients for the tensor ops and for a recorded graph forward pass."""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..graph import ModelGraph, forward


class BackwardError(RuntimeError):
    pass


def conv2d_backward(gy: np.ndarray, x: np.ndarray, spec: T.ConvSpec, need_input: bool = True):
    """Gradients (input, weight, bias) of a stride-1 same-padded conv; input grad is None if not needed."""
    if spec.stride != 1 or 2 * spec.padding != spec.kernel[0] - 1 or spec.kernel[0] != spec.kernel[1]:
        raise NotImplementedError("backward supports stride-1, odd square kernels with same padding")
    b, c, h, w = x.shape
    g = spec.groups
    kh, kw = spec.kernel
    p = spec.padding
    cin_g, cout_g = c // g, spec.out_channels // g
    dtype = x.dtype
    wts = spec.weights.astype(dtype, copy=False)

    gb = gy.sum(axis=(0, 2, 3))

    # input gradient: correlate gy with the spatially flipped, in/out-swapped kernel
    gx = None
    if need_input:
        wt = np.empty((c, cout_g, kh, kw), dtype)
        for k in range(g):
            blk = wts[k * cout_g:(k + 1) * cout_g, :, ::-1, ::-1]
            wt[k * cin_g:(k + 1) * cin_g] = blk.transpose(1, 0, 2, 3)
        gx = T.conv2d(gy, T.ConvSpec(spec.out_channels, c, (kh, kw), groups=g, padding=p, weights=wt,
                                     bias=np.zeros(c, dtype)))

    # weight gradient on the flattened padded grid (see tensor.conv2d); padding rows carry zero gradient
    k = kh
    hp, wp = h + 2 * p, w + 2 * p
    n_rows = b * hp * wp
    m = n_rows - (k - 1) * (wp + 1)
    rows = T.padded_rows(x, p)
    gfull = np.zeros((b, hp, wp, spec.out_channels), dtype)
    gfull[:, :h, :w] = gy.transpose(0, 2, 3, 1)
    gfull = gfull.reshape(n_rows, -1)[:m]
    gw = np.empty(spec.weight_shape, dtype)
    for grp in range(g):
        xr = rows if g == 1 else np.ascontiguousarray(rows[:, grp * cin_g:(grp + 1) * cin_g])
        win = T.row_windows(xr, k)
        gk = gfull if g == 1 else np.ascontiguousarray(gfull[:, grp * cout_g:(grp + 1) * cout_g])
        for dy in range(k):
            blk = win[dy * wp:dy * wp + m].T @ gk
            gw[grp * cout_g:(grp + 1) * cout_g, :, dy, :] = blk.reshape(kw, cin_g, cout_g).transpose(2, 1, 0)
    return gx, gw, gb


def depth_to_space_backward(gy, block):
    return T.space_to_depth(gy, block)


def space_to_depth_backward(gy, block):
    return T.depth_to_space(gy, block)


def stack_repeat_backward(gy, n):
    b, c, h, w = gy.shape
    return gy.reshape(b, c // n, n, h, w).sum(axis=2)


def nearest_upsample_backward(gy, factor):
    b, c, h, w = gy.shape
    f = factor
    return gy.reshape(b, c, h // f, f, w // f, f).sum(axis=(3, 5))


def relu_backward(gy, y):
    return gy * (y > 0)


def clipped_relu_backward(gy, y, max=255.0):
    """Unit gradient strictly inside (0, max), zero elsewhere."""
    return gy * ((y > 0) & (y < max))


def mul_backward(gy, a, b):
    ga = gy * b
    gb = gy * a
    if b.shape != a.shape:
        gb = gb.sum(axis=(2, 3), keepdims=True)
    return ga, gb


def concat_backward(gy, sizes):
    return np.split(gy, np.cumsum(sizes)[:-1], axis=1)


def _activation_backward(g, node, y):
    act = node.attrs.get("act")
    if act == "relu":
        return relu_backward(g, y)
    if act == "clipped_relu":
        return clipped_relu_backward(g, y, node.attrs["act_max"])
    return g


def backward(graph: ModelGraph, tape: list, grad_output: np.ndarray, need_input_grad: bool = True):
    """Backpropagate ``grad_output`` through a tape filled by ``graph.forward(..., tape=tape)``.

    Returns ``(param_grads, input_grad)``. Fake-quant points pass the
    gradient straight through inside their representable range.
    """
    if not tape:
        raise BackwardError("backward called without a recorded forward pass")
    grads: dict[str, np.ndarray] = {graph.output: grad_output}
    pgrads: dict[str, np.ndarray] = {}
    input_grad = None
    for node, args, y, conv_params, mask in reversed(tape):
        g = grads.pop(node.name, None)
        if g is None:
            continue
        if mask is not None:
            g = g * mask
        if node.op == "input":
            input_grad = g
            continue
        g = _activation_backward(g, node, y)
        op, a = node.op, node.attrs
        if op == "conv":
            spec = graph.conv_spec(node)
            if conv_params is not None:
                spec.weights, spec.bias = conv_params
            need = need_input_grad or node.inputs[0] != graph.input_name
            gx, gw, gb = conv2d_backward(g, args[0], spec, need_input=need)
            for key, val in ((f"{node.name}.weight", gw), (f"{node.name}.bias", gb)):
                pgrads[key] = pgrads.get(key, 0) + val
            ins = [gx]
        elif op == "relu":
            ins = [relu_backward(g, y)]
        elif op == "clipped_relu":
            ins = [clipped_relu_backward(g, y, a.get("max", 255.0))]
        elif op == "add":
            ins = [g, g]
        elif op == "mul":
            ins = list(mul_backward(g, args[0], args[1]))
        elif op == "concat":
            ins = concat_backward(g, [t.shape[1] for t in args])
        elif op == "depth_to_space":
            ins = [depth_to_space_backward(g, a["block"])]
        elif op == "space_to_depth":
            ins = [space_to_depth_backward(g, a["block"])]
        elif op == "stack_repeat":
            ins = [stack_repeat_backward(g, a["n"])]
        elif op == "nearest_upsample":
            ins = [nearest_upsample_backward(g, a["factor"])]
        else:
            raise BackwardError(f"no gradient for op {op!r} at node {node.name}")
        for src, gi in zip(node.inputs, ins):
            if gi is None:
                continue
            grads[src] = grads[src] + gi if src in grads else gi
    tape.clear()
    return pgrads, input_grad


def value_and_grad(graph: ModelGraph, x, loss_fn, *, fake_quant=None, dtype=np.float32, need_input_grad=True):
    """Forward, scalar loss ``loss_fn(pred) -> (value, dloss/dpred)``, and backward."""
    tape: list = []
    pred = forward(graph, x, fake_quant=fake_quant, tape=tape, dtype=dtype)
    value, gpred = loss_fn(pred)
    pgrads, gx = backward(graph, tape, gpred, need_input_grad)
    return value, pgrads, gx, pred
