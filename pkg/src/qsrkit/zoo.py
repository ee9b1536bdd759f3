"""The six challenge architectures as ModelGraphs, plus the bicubic baseline.

Default widths are chosen so that each model stores roughly the number of
parameters implied by its published INT8 model size (one byte per weight).
"""

from __future__ import annotations

import numpy as np

from . import graph as G
from .graph import GraphError, ModelGraph, Node
from .resample import bicubic_upscale

SCALE = 3

# published INT8 model sizes, KB
REFERENCE_SIZE_KB = {
    "abpn": 53,
    "xlsr": 67,
    "tinysrnet": 109,
    "fastsr": 30,
    "prpsr": 82,
    "edsr_attn": 940,
}


class _Builder:
    def __init__(self, name: str, seed: int):
        self.g = ModelGraph(name, scale=SCALE)
        self.rng = np.random.default_rng(seed)

    def add_node(self, name, op, inputs=(), **attrs) -> str:
        self.g.nodes.append(Node(name, op, tuple(inputs), attrs))
        return name

    def input(self) -> str:
        return self.add_node("input", "input")

    def conv(self, name, x, cin, cout, k=3, groups=1, init="he", **attrs) -> str:
        fan_in = cin // groups * k * k
        shape = (cout, cin // groups, k, k)
        if init == "zero":
            w = np.zeros(shape, np.float32)
        else:
            bound = np.sqrt(6.0 / fan_in)
            w = self.rng.uniform(-bound, bound, shape).astype(np.float32)
        self.g.params[f"{name}.weight"] = w
        self.g.params[f"{name}.bias"] = np.zeros(cout, np.float32)
        return self.add_node(name, "conv", (x,), in_channels=cin, out_channels=cout, kernel=[k, k],
                             groups=groups, padding=k // 2, **attrs)

    def relu(self, name, x) -> str:
        return self.add_node(name, "relu", (x,))

    def clip(self, name, x, max=255.0) -> str:
        return self.add_node(name, "clipped_relu", (x,), max=float(max))

    def finish(self, output: str, **meta) -> ModelGraph:
        self.g.output = output
        self.g.meta.update(meta)
        self.g.validate()
        return self.g


def _nearest_kernel_init(g: ModelGraph, name: str, r: int) -> None:
    """Make a 3 -> 3*r*r conv copy channel c into outputs c*r*r .. c*r*r + r*r - 1 (nearest upscale after D2S)."""
    w = g.params[f"{name}.weight"]
    w[:] = 0
    k = w.shape[-1] // 2
    for c in range(w.shape[1]):
        w[c * r * r:(c + 1) * r * r, c, k, k] = 1.0


def build_abpn(width: int = 35, seed: int = 0) -> ModelGraph:
    """Anchor-based plain net: the convs learn a residual over pixel repetition."""
    if width < 1:
        raise ValueError("width must be >= 1")
    b = _Builder("abpn", seed)
    x = b.input()
    h = b.relu("relu1", b.conv("conv1", x, 3, width))
    for i in range(2, 6):
        h = b.relu(f"relu{i}", b.conv(f"conv{i}", h, width, width))
    res = b.conv("conv6", h, width, 3 * SCALE * SCALE, init="zero")
    anchor = b.add_node("anchor", "stack_repeat", (x,), n=SCALE * SCALE)
    s = b.add_node("sum", "add", (res, anchor))
    y = b.clip("clip", s)
    out = b.add_node("d2s", "depth_to_space", (y,), block=SCALE)
    return b.finish(out, arch="abpn", width=width, learnable_tail="conv6")


def build_xlsr(width: int = 64, n_gblocks: int = 4, seed: int = 0) -> ModelGraph:
    """Grouped-convolution net: Gblocks of (4-group 3x3 conv, 1x1 merge, ReLU) with a long skip."""
    if width % 4:
        raise ValueError(f"width {width} must be divisible by 4 (four convolution groups)")
    b = _Builder("xlsr", seed)
    x = b.input()
    head = b.relu("head.relu", b.conv("head", x, 3, width))
    h = head
    for i in range(1, n_gblocks + 1):
        h = b.conv(f"gblock{i}.group", h, width, width, groups=4)
        h = b.relu(f"gblock{i}.relu", b.conv(f"gblock{i}.merge", h, width, width, k=1))
    h = b.add_node("skip", "add", (h, head))
    y = b.clip("clip", b.conv("tail", h, width, 3 * SCALE * SCALE))
    out = b.add_node("d2s", "depth_to_space", (y,), block=SCALE)
    return b.finish(out, arch="xlsr", width=width, n_gblocks=n_gblocks, learnable_tail="tail")


def _res_block(b: _Builder, prefix: str, x: str, c: int) -> str:
    h = b.relu(f"{prefix}.relu", b.conv(f"{prefix}.conv1", x, c, c))
    h = b.conv(f"{prefix}.conv2", h, c, c)
    return b.add_node(f"{prefix}.add", "add", (x, h))


def build_tinysrnet(width: int = 36, seed: int = 0) -> ModelGraph:
    """Residual trunk run at half LR resolution between space-to-depth and depth-to-space.

    Input height and width must be even. A single 3x3 conv on the input,
    shuffled to HR, forms the residual path; it starts as nearest upscaling.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    b = _Builder("tinysrnet", seed)
    x = b.input()
    s = b.add_node("s2d", "space_to_depth", (x,), block=2)
    h = b.relu("head.relu", b.conv("head", s, 12, width))
    for i in range(1, 4):
        h = _res_block(b, f"block{i}", h, width)
    r2 = (2 * SCALE) ** 2
    t = b.conv("tail", h, width, 3 * r2, init="zero")
    trunk = b.add_node("d2s", "depth_to_space", (t,), block=2 * SCALE)
    rc = b.conv("residual", x, 3, 3 * SCALE * SCALE)
    _nearest_kernel_init(b.g, "residual", SCALE)
    skip = b.add_node("residual.d2s", "depth_to_space", (rc,), block=SCALE)
    out = b.clip("clip", b.add_node("sum", "add", (trunk, skip)))
    return b.finish(out, arch="tinysrnet", width=width, learnable_tail="tail")


def build_fastsr(width: int = 21, seed: int = 0) -> ModelGraph:
    """LR-scale residual trunk with a nearest-neighbour global residual at HR."""
    if width < 1:
        raise ValueError("width must be >= 1")
    b = _Builder("fastsr", seed)
    x = b.input()
    h = b.relu("head.relu", b.conv("head", x, 3, width))
    for i in range(1, 4):
        h = _res_block(b, f"block{i}", h, width)
    t = b.conv("tail", h, width, 3 * SCALE * SCALE, init="zero")
    up = b.add_node("d2s", "depth_to_space", (t,), block=SCALE)
    nn_up = b.add_node("nearest", "nearest_upsample", (x,), factor=SCALE)
    out = b.clip("clip", b.add_node("sum", "add", (up, nn_up)))
    return b.finish(out, arch="fastsr", width=width, learnable_tail="tail")


def build_prpsr(width: int = 40, mode: str = "inference", seed: int = 0) -> ModelGraph:
    """Plain re-parameterizable net.

    ``mode="train"`` replaces each body 3x3 conv by the block
    ``relu(x + conv1x1(x) + conv3x3(x))``; ``mode="inference"`` is a plain
    conv chain with no additions.
    """
    if mode not in ("train", "inference"):
        raise ValueError(f"mode must be 'train' or 'inference', got {mode!r}")
    if width < 1:
        raise ValueError("width must be >= 1")
    b = _Builder("prpsr", seed)
    x = b.input()
    h = b.relu("head.relu", b.conv("head", x, 3, width, k=5))
    for i in range(1, 6):
        p = f"body{i}"
        if mode == "train":
            c3 = b.conv(f"{p}.conv3", h, width, width, k=3, rep_block=p)
            c1 = b.conv(f"{p}.conv1", h, width, width, k=1, rep_block=p)
            s1 = b.add_node(f"{p}.sum1", "add", (h, c1), rep_block=p)
            s = b.add_node(f"{p}.sum", "add", (s1, c3), rep_block=p)
        else:
            s = b.conv(f"{p}.conv", h, width, width)
        h = b.relu(f"{p}.relu", s)
    y = b.clip("clip", b.conv("tail", h, width, 3 * SCALE * SCALE))
    out = b.add_node("d2s", "depth_to_space", (y,), block=SCALE)
    return b.finish(out, arch="prpsr", width=width, mode=mode, learnable_tail="tail")


def build_edsr_attention(width: int = 64, attn_hidden: int | None = None, seed: int = 0) -> ModelGraph:
    """EDSR-style body of six residual blocks, each gated by a spatial attention unit.

    The gate is ``clipped_relu(conv(relu(conv(r))), 1)``: a hard-sigmoid whose
    slope and offset live in the second conv (its bias starts at 0.5).
    The six block outputs are concatenated and reduced back by a 1x1 conv.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    hid = attn_hidden or width
    b = _Builder("edsr_attn", seed)
    x = b.input()
    head = b.conv("head", x, 3, width)
    h = head
    outs = []
    for i in range(1, 7):
        p = f"block{i}"
        r = b.conv(f"{p}.conv2", b.relu(f"{p}.relu", b.conv(f"{p}.conv1", h, width, width)), width, width)
        a = b.relu(f"{p}.att.relu", b.conv(f"{p}.att.conv1", r, width, hid))
        a = b.conv(f"{p}.att.conv2", a, hid, width)
        b.g.params[f"{p}.att.conv2.bias"][:] = 0.5
        gate = b.clip(f"{p}.att.gate", a, max=1.0)
        h = b.add_node(f"{p}.add", "add", (h, b.add_node(f"{p}.mul", "mul", (r, gate))))
        outs.append(h)
    cat = b.add_node("concat", "concat", tuple(outs))
    red = b.conv("reduce", cat, 6 * width, width, k=1)
    h = b.add_node("skip", "add", (red, head))
    h = b.relu("tail1.relu", b.conv("tail1", h, width, width))
    h = b.relu("tail2.relu", b.conv("tail2", h, width, width))
    y = b.clip("clip", b.conv("tail3", h, width, 3 * SCALE * SCALE))
    out = b.add_node("d2s", "depth_to_space", (y,), block=SCALE)
    return b.finish(out, arch="edsr_attn", width=width, attn_hidden=hid, learnable_tail="tail3")


class BicubicBaseline:
    """Callable stand-in for a model: Keys bicubic x3 upscaling."""

    name = "bicubic"
    model_size_bytes = 0

    def __init__(self, factor: int = SCALE):
        self.factor = factor

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return bicubic_upscale(x, self.factor)


BUILDERS = {
    "abpn": build_abpn,
    "xlsr": build_xlsr,
    "tinysrnet": build_tinysrnet,
    "fastsr": build_fastsr,
    "prpsr": build_prpsr,
    "edsr_attn": build_edsr_attention,
}
ARCHITECTURES = tuple(BUILDERS) + ("bicubic",)


def build(arch: str, seed: int = 0, **kwargs):
    if arch == "bicubic":
        return BicubicBaseline()
    try:
        return BUILDERS[arch](seed=seed, **kwargs)
    except KeyError:
        raise ValueError(f"unknown architecture {arch!r}; choose from {ARCHITECTURES}") from None


def zero_learnable_path(model: ModelGraph) -> ModelGraph:
    """Copy of ``model`` with its residual-producing tail conv zeroed."""
    m = model.copy()
    tail = m.meta["learnable_tail"]
    m.params[f"{tail}.weight"][:] = 0
    m.params[f"{tail}.bias"][:] = 0
    return m


def forward(model, x) -> np.ndarray:
    """Upscale a (b, 3, h, w) batch of [0, 255] images to (b, 3, 3h, 3w)."""
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1] != 3:
        raise GraphError(f"expected input (b, 3, h, w), got {x.shape}", "input")
    if not isinstance(model, ModelGraph):
        return model(x)
    y = G.forward(model, x)
    expect = (x.shape[0], 3, x.shape[2] * model.scale, x.shape[3] * model.scale)
    if y.shape != expect:
        raise GraphError(f"output shape {y.shape} != expected {expect}", model.output)
    return y
