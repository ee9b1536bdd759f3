"""Affine quantization parameters, (de)quantization and fixed-point multipliers.

Rounding is half-away-from-zero everywhere, including requantization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INT32_MIN, INT32_MAX = -(2 ** 31), 2 ** 31 - 1


class QuantizationError(ValueError):
    pass


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class QuantParams:
    """Per-tensor (scalar) or per-output-channel (array, weights only) parameters.

    ``narrow`` drops the most negative code so signed weights are symmetric
    in [-127, 127].
    """

    scale: float | np.ndarray
    zero_point: int | np.ndarray = 0
    bits: int = 8
    signed: bool = False
    narrow: bool = False

    def __post_init__(self):
        scale = np.asarray(self.scale, dtype=np.float32)
        zp = np.asarray(self.zero_point, dtype=np.int64)
        if np.any(~(scale > 0)):
            raise QuantizationError(f"scale must be positive, got {self.scale}")
        if np.any(zp < self.qmin) or np.any(zp > self.qmax):
            raise QuantizationError(f"zero point {self.zero_point} outside [{self.qmin}, {self.qmax}]")
        if scale.ndim:
            if zp.ndim and zp.shape != scale.shape:
                raise QuantizationError("per-channel scale and zero point lengths differ")
            if np.any(zp != 0):
                raise QuantizationError("per-channel quantization is symmetric: zero points must be 0")
        # scales are stored as float32; keep the exact float32 value
        object.__setattr__(self, "scale", scale.astype(np.float64) if scale.ndim else float(scale))
        object.__setattr__(self, "zero_point", np.broadcast_to(zp, scale.shape).copy() if scale.ndim else int(zp))

    @property
    def per_channel(self) -> bool:
        return np.ndim(self.scale) > 0

    @property
    def qmin(self) -> int:
        if not self.signed:
            return 0
        return -(2 ** (self.bits - 1)) + (1 if self.narrow else 0)

    @property
    def qmax(self) -> int:
        return 2 ** (self.bits - 1) - 1 if self.signed else 2 ** self.bits - 1

    def real_range(self) -> tuple:
        return (self.qmin - self.zero_point) * self.scale, (self.qmax - self.zero_point) * self.scale

    def __eq__(self, other):
        if not isinstance(other, QuantParams):
            return NotImplemented
        return (np.array_equal(self.scale, other.scale) and np.array_equal(self.zero_point, other.zero_point)
                and (self.bits, self.signed, self.narrow) == (other.bits, other.signed, other.narrow))

    __hash__ = None


PIXEL_QPARAMS = QuantParams(1.0, 0)


def compute_qparams(min_val: float, max_val: float, signed: bool = False, bits: int = 8) -> QuantParams:
    """Asymmetric per-tensor parameters covering [min_val, max_val] extended to include 0.

    A degenerate [0, 0] range maps to scale 1, zero point 0.
    """
    if min_val > max_val:
        raise QuantizationError(f"min {min_val} > max {max_val}")
    lo, hi = min(float(min_val), 0.0), max(float(max_val), 0.0)
    qp = QuantParams(1.0, 0, bits, signed)
    if hi == lo:
        return qp
    # subnormal ranges would round the float32 scale to 0
    scale = float(max(np.float32((hi - lo) / (qp.qmax - qp.qmin)), np.finfo(np.float32).tiny))
    zp = int(np.clip(round_half_away(qp.qmin - lo / scale), qp.qmin, qp.qmax))
    return QuantParams(scale, zp, bits, signed)


def _bcast(qp: QuantParams, ndim: int, axis: int):
    scale, zp = qp.scale, qp.zero_point
    if qp.per_channel:
        shape = [1] * ndim
        shape[axis] = -1
        return np.reshape(scale, shape), np.reshape(zp, shape)
    return scale, zp


def quantize(x, qp: QuantParams, axis: int = 0) -> np.ndarray:
    """``clamp(round(x / scale) + zero_point)`` as int64; per-channel params apply along ``axis``."""
    x = np.asarray(x, dtype=np.float64)
    scale, zp = _bcast(qp, x.ndim, axis)
    q = round_half_away(x / scale) + zp
    return np.clip(q, qp.qmin, qp.qmax).astype(np.int64)


def dequantize(q, qp: QuantParams, axis: int = 0) -> np.ndarray:
    q = np.asarray(q, dtype=np.int64)
    scale, zp = _bcast(qp, q.ndim, axis)
    return (q - zp) * scale


def fake_quant(t, qp: QuantParams, axis: int = 0) -> np.ndarray:
    """Quantize-dequantize round trip, in the dtype of ``t``."""
    t = np.asarray(t)
    return dequantize(quantize(t, qp, axis), qp, axis).astype(t.dtype)


def fake_quant_mask(t, qp: QuantParams, axis: int = 0) -> np.ndarray:
    """Straight-through mask: 1 where ``t`` lies inside the representable range."""
    t = np.asarray(t)
    lo, hi = qp.real_range()
    if qp.per_channel:
        shape = [1] * t.ndim
        shape[axis] = -1
        lo, hi = np.reshape(lo, shape), np.reshape(hi, shape)
    return (t >= lo) & (t <= hi)


def fake_quant_backward(grad, t, qp: QuantParams, axis: int = 0) -> np.ndarray:
    return grad * fake_quant_mask(t, qp, axis)


def weight_qparams(w: np.ndarray, bits: int = 8) -> QuantParams:
    """Symmetric per-output-channel parameters from the channel max-abs (all-zero channels get scale 1)."""
    qmax = 2 ** (bits - 1) - 1
    m = np.abs(w.reshape(w.shape[0], -1)).max(axis=1).astype(np.float64)
    scale = np.where(m > 0, m / qmax, 1.0).astype(np.float32)
    # a float32 scale that rounds down could push max|w|/scale past qmax; clamping in quantize handles it
    return QuantParams(scale, np.zeros(len(scale), np.int64), bits, signed=True, narrow=True)


def quantize_multiplier(m: float) -> tuple[int, int]:
    """Fixed-point form ``m ~= m0 * 2**-(31 + shift)`` with ``m0`` in [2**30, 2**31)."""
    if m < 0:
        raise QuantizationError("multiplier must be non-negative")
    if m == 0:
        return 0, 0
    frac, exp = np.frexp(m)
    m0 = int(round_half_away(frac * 2.0 ** 31))
    if m0 == 2 ** 31:
        m0 //= 2
        exp += 1
    return m0, int(-exp)


def rounding_right_shift(v: np.ndarray, n) -> np.ndarray:
    """``round(v / 2**n)``, half away from zero, for int64 ``v`` and integer ``n`` (scalar or array)."""
    v = np.asarray(v, dtype=np.int64)
    n = np.asarray(n, dtype=np.int64)
    if np.any(n < 0):
        return np.where(n < 0, v << np.maximum(-n, 0), rounding_right_shift(v, np.maximum(n, 0)))
    big = n >= 63
    nn = np.where(big, 1, n)
    half = np.where(nn > 0, np.left_shift(np.int64(1), np.maximum(nn - 1, 0)), 0)
    mag = (np.abs(v) + half) >> nn
    out = np.sign(v) * mag
    return np.where(big, 0, out)


def requantize(acc, m0, shift) -> np.ndarray:
    """Scale an integer accumulator by the fixed-point multiplier ``(m0, shift)``.

    ``|acc| < 2**31`` and ``m0 < 2**31`` keep the product inside int64.
    """
    prod = np.asarray(acc, dtype=np.int64) * np.asarray(m0, dtype=np.int64)
    return rounding_right_shift(prod, 31 + np.asarray(shift, dtype=np.int64))
