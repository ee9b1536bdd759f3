"""Dense (batch, channels, height, width) tensor primitives.

Tensors are plain ``numpy.ndarray`` objects of rank 4, float32 by default.
Every op allocates its output and never mutates its inputs. Ops preserve
the input dtype, so float64 arrays can be pushed through the same code
for gradient checks and quantization simulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DimensionError",
    "ConvSpec",
    "as_tensor",
    "conv2d",
    "conv2d_reference",
    "depth_to_space",
    "space_to_depth",
    "stack_repeat",
    "nearest_upsample",
    "relu",
    "clipped_relu",
    "add",
    "mul",
    "concat",
]

AXES = ("batch", "channels", "height", "width")

# cap on the im2col buffer before the conv is tiled over output rows
_COLS_BUDGET = 64 * 1024 * 1024


class DimensionError(ValueError):
    """Shape contract violation; ``axis`` names the offending dimension."""

    def __init__(self, message: str, axis: str | None = None):
        super().__init__(message)
        self.axis = axis


def as_tensor(x, dtype=np.float32) -> np.ndarray:
    """Coerce ``x`` to a contiguous rank-4 tensor."""
    t = np.asarray(x)
    if t.ndim != 4:
        raise DimensionError(f"expected a rank-4 (b, c, h, w) tensor, got shape {t.shape}")
    if t.size and min(t.shape) < 1:
        raise DimensionError(f"empty axis in shape {t.shape}")
    if not np.issubdtype(t.dtype, np.floating):
        t = t.astype(dtype)
    return np.ascontiguousarray(t)


@dataclass
class ConvSpec:
    """A 2-D convolution layer: hyper-parameters plus its weights and bias."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    padding: int | None = None
    groups: int = 1
    weights: np.ndarray | None = None
    bias: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if isinstance(self.kernel, int):
            self.kernel = (self.kernel, self.kernel)
        self.kernel = tuple(int(k) for k in self.kernel)
        if self.groups < 1:
            raise ValueError("groups must be >= 1")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise DimensionError(
                f"channels {self.in_channels}->{self.out_channels} not divisible by groups={self.groups}",
                axis="channels",
            )
        if self.padding is None:
            self.padding = self.kernel[0] // 2
        shape = self.weight_shape
        if self.weights is None:
            self.weights = np.zeros(shape, np.float32)
        elif tuple(self.weights.shape) != shape:
            raise DimensionError(f"weights shape {self.weights.shape} != expected {shape}", axis="channels")
        if self.bias is None:
            self.bias = np.zeros(self.out_channels, self.weights.dtype)
        elif np.shape(self.bias) != (self.out_channels,):
            raise DimensionError(f"bias length {np.shape(self.bias)} != out_channels {self.out_channels}",
                                 axis="channels")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, *self.kernel)

    @property
    def n_params(self) -> int:
        return int(np.prod(self.weight_shape)) + self.out_channels


def _check_conv_input(x: np.ndarray, spec: ConvSpec) -> None:
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be rank 4, got {x.ndim}")
    if x.shape[1] != spec.in_channels:
        raise DimensionError(
            f"conv2d expects {spec.in_channels} input channels, got {x.shape[1]}", axis="channels")
    kh, kw = spec.kernel
    p = spec.padding
    if x.shape[2] + 2 * p < kh:
        raise DimensionError(f"height {x.shape[2]} too small for kernel {kh}", axis="height")
    if x.shape[3] + 2 * p < kw:
        raise DimensionError(f"width {x.shape[3]} too small for kernel {kw}", axis="width")


def _out_hw(h: int, w: int, spec: ConvSpec) -> tuple[int, int]:
    kh, kw = spec.kernel
    p, s = spec.padding, spec.stride
    return (h + 2 * p - kh) // s + 1, (w + 2 * p - kw) // s + 1


def conv2d_reference(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Direct convolution: explicit loops over output channel, input channel and tap."""
    _check_conv_input(x, spec)
    b, c, h, w = x.shape
    kh, kw = spec.kernel
    p, s, g = spec.padding, spec.stride, spec.groups
    oh, ow = _out_hw(h, w, spec)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cin_g = c // g
    cout_g = spec.out_channels // g
    y = np.zeros((b, spec.out_channels, oh, ow), dtype=x.dtype)
    wts = spec.weights.astype(x.dtype, copy=False)
    for o in range(spec.out_channels):
        grp = o // cout_g
        for i in range(cin_g):
            src = xp[:, grp * cin_g + i]
            for dy in range(kh):
                for dx in range(kw):
                    y[:, o] += wts[o, i, dy, dx] * src[:, dy:dy + s * (oh - 1) + 1:s, dx:dx + s * (ow - 1) + 1:s]
        y[:, o] += spec.bias[o]
    return y


def _im2col(xl: np.ndarray, kh: int, kw: int, s: int, oh: int, ow: int, row0: int, rows: int) -> np.ndarray:
    """Columns (b, rows, ow, kh, kw, c) for output rows [row0, row0 + rows) of padded NHWC ``xl``."""
    b, _, _, c = xl.shape
    cols = np.empty((b, rows, ow, kh, kw, c), dtype=xl.dtype)
    for dy in range(kh):
        y0 = row0 * s + dy
        for dx in range(kw):
            cols[:, :, :, dy, dx] = xl[:, y0:y0 + s * (rows - 1) + 1:s, dx:dx + s * (ow - 1) + 1:s]
    return cols


def _conv_im2col(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """General-stride fallback: channels-last im2col and one GEMM per group."""
    b, c, h, w = x.shape
    kh, kw = spec.kernel
    p, s, g = spec.padding, spec.stride, spec.groups
    oh, ow = _out_hw(h, w, spec)
    dtype = x.dtype
    xl = np.pad(x.transpose(0, 2, 3, 1), ((0, 0), (p, p), (p, p), (0, 0)))
    cin_g = c // g
    cout_g = spec.out_channels // g
    wts = spec.weights.astype(dtype, copy=False)
    out = np.empty((b, oh, ow, spec.out_channels), dtype=dtype)
    row_bytes = b * ow * kh * kw * cin_g * dtype.itemsize
    step = max(1, min(oh, _COLS_BUDGET // max(row_bytes, 1)))
    for k in range(g):
        wmat = wts[k * cout_g:(k + 1) * cout_g].transpose(2, 3, 1, 0).reshape(-1, cout_g)
        xg = xl[..., k * cin_g:(k + 1) * cin_g]
        for r0 in range(0, oh, step):
            rows = min(step, oh - r0)
            cols = _im2col(xg, kh, kw, s, oh, ow, r0, rows).reshape(b * rows * ow, -1)
            out[:, r0:r0 + rows, :, k * cout_g:(k + 1) * cout_g] = (cols @ wmat).reshape(b, rows, ow, cout_g)
    out += spec.bias.astype(dtype, copy=False)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _fast_path(spec: ConvSpec) -> bool:
    kh, kw = spec.kernel
    return spec.stride == 1 and kh == kw and kh % 2 == 1 and spec.padding == kh // 2


def padded_rows(x: np.ndarray, p: int) -> np.ndarray:
    """Zero-padded channels-last copy of ``x`` flattened to (b*(h+2p)*(w+2p), c)."""
    b, c, h, w = x.shape
    xl = np.zeros((b, h + 2 * p, w + 2 * p, c), dtype=x.dtype)
    xl[:, p:p + h, p:p + w] = x.transpose(0, 2, 3, 1)
    return xl.reshape(-1, c)


def row_windows(rows: np.ndarray, k: int) -> np.ndarray:
    """(L-k+1, k*c) array whose row i is rows[i], ..., rows[i+k-1] laid end to end."""
    if k == 1:
        return rows
    L, c = rows.shape
    view = np.lib.stride_tricks.as_strided(rows, shape=(L - k + 1, k * c), strides=rows.strides, writeable=False)
    return np.ascontiguousarray(view)


def conv2d(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Optimized convolution.

    Stride-1 same-padded convs run on the flattened padded image: a kernel
    row ``dy`` is a fixed row offset ``dy * padded_width``, and the ``kw``
    taps of that row are merged into one contiguous window, so each kernel
    row is a single GEMM with no im2col gather. Outputs at the padding
    columns are computed and discarded. Other strides use im2col.
    """
    _check_conv_input(x, spec)
    if not _fast_path(spec):
        return _conv_im2col(x, spec)
    b, c, h, w = x.shape
    k = spec.kernel[0]
    p, g = spec.padding, spec.groups
    hp, wp = h + 2 * p, w + 2 * p
    n_rows = b * hp * wp
    m = n_rows - (k - 1) * (wp + 1)
    dtype = x.dtype
    cin_g, cout_g = c // g, spec.out_channels // g
    wts = spec.weights.astype(dtype, copy=False)
    rows = padded_rows(x, p)
    full = np.zeros((n_rows, spec.out_channels), dtype=dtype)
    tmp = np.empty((m, cout_g), dtype=dtype)
    for grp in range(g):
        xr = rows if g == 1 else np.ascontiguousarray(rows[:, grp * cin_g:(grp + 1) * cin_g])
        win = row_windows(xr, k)
        acc = full[:m, grp * cout_g:(grp + 1) * cout_g] if g > 1 else full[:m]
        for dy in range(k):
            wmat = np.ascontiguousarray(wts[grp * cout_g:(grp + 1) * cout_g, :, dy, :].transpose(2, 1, 0)
                                        ).reshape(k * cin_g, cout_g)
            np.matmul(win[dy * wp:dy * wp + m], wmat, out=tmp)
            acc += tmp
    y = full.reshape(b, hp, wp, spec.out_channels)[:, :h, :w]
    y = y + spec.bias.astype(dtype, copy=False)
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def depth_to_space(x: np.ndarray, block: int) -> np.ndarray:
    """Pixel shuffle: (b, c*r*r, h, w) -> (b, c, h*r, w*r)."""
    b, c, h, w = x.shape
    r = int(block)
    if r < 1 or c % (r * r):
        raise DimensionError(f"channels {c} not divisible by block^2={r * r}", axis="channels")
    oc = c // (r * r)
    y = x.reshape(b, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(y.reshape(b, oc, h * r, w * r))


def space_to_depth(x: np.ndarray, block: int) -> np.ndarray:
    """Inverse pixel shuffle: (b, c, h*r, w*r) -> (b, c*r*r, h, w)."""
    b, c, h, w = x.shape
    r = int(block)
    if r < 1 or h % r:
        raise DimensionError(f"height {h} not divisible by block {r}", axis="height")
    if w % r:
        raise DimensionError(f"width {w} not divisible by block {r}", axis="width")
    y = x.reshape(b, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(y.reshape(b, c * r * r, h // r, w // r))


def stack_repeat(x: np.ndarray, n: int) -> np.ndarray:
    """Repeat every channel ``n`` times in place (c0,c0,...,c1,c1,...).

    This ordering makes ``depth_to_space(stack_repeat(x, r*r), r)`` a
    nearest-neighbour upscale of every channel.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.repeat(x, n, axis=1)


def nearest_upsample(x: np.ndarray, factor: int) -> np.ndarray:
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return x.copy()
    return np.repeat(np.repeat(x, factor, axis=2), factor, axis=3)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def clipped_relu(x: np.ndarray, max: float = 255.0) -> np.ndarray:
    return np.clip(x, 0, max)


def _same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        for name, sa, sb in zip(AXES, a.shape, b.shape):
            if sa != sb:
                raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ on {name}", axis=name)
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_shape(a, b, "add")
    return a + b


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Element-wise product; ``b`` may also be a per-channel gate of shape (b, c, 1, 1)."""
    if b.ndim == 4 and b.shape[2:] == (1, 1) and a.shape[:2] == b.shape[:2]:
        return a * b
    _same_shape(a, b, "mul")
    return a * b


def concat(tensors: list[np.ndarray]) -> np.ndarray:
    """Channel concatenation."""
    first = tensors[0]
    for t in tensors[1:]:
        for name, i in (("batch", 0), ("height", 2), ("width", 3)):
            if t.shape[i] != first.shape[i]:
                raise DimensionError(f"concat: {name} mismatch {t.shape} vs {first.shape}", axis=name)
    return np.concatenate(tensors, axis=1)
