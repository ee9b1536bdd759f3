"""Separable bicubic resampling with the Keys kernel (a = -0.5) and edge replication."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

KEYS_A = -0.5


def keys_kernel(x: np.ndarray, a: float = KEYS_A) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


@lru_cache(maxsize=64)
def resize_matrix(n_in: int, n_out: int, antialias: bool = True) -> np.ndarray:
    """Dense (n_out, n_in) interpolation matrix whose rows sum to one.

    Pixel centres are aligned (``u = (i + 0.5) / s - 0.5``). When
    downscaling with ``antialias`` the kernel is stretched by ``1 / s``.
    Taps falling outside the image are folded onto the border pixel.
    """
    s = n_out / n_in
    stretch = 1.0 / s if (antialias and s < 1) else 1.0
    support = 2.0 * stretch
    m = np.zeros((n_out, n_in))
    centres = (np.arange(n_out) + 0.5) / s - 0.5
    for i, u in enumerate(centres):
        taps = np.arange(int(np.floor(u - support)), int(np.ceil(u + support)) + 1)
        w = keys_kernel((u - taps) / stretch)
        np.add.at(m[i], np.clip(taps, 0, n_in - 1), w)
    m /= m.sum(axis=1, keepdims=True)
    m.setflags(write=False)
    return m


def resize(x: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Resize the two trailing axes of ``x`` (float64 arithmetic, dtype preserved)."""
    h, w = x.shape[-2:]
    mh = resize_matrix(h, out_h, antialias)
    mw = resize_matrix(w, out_w, antialias)
    y = mh @ x.astype(np.float64) @ mw.T
    return y.astype(x.dtype if np.issubdtype(x.dtype, np.floating) else np.float32)


def bicubic_upscale(image: np.ndarray, factor: int) -> np.ndarray:
    """Upscale every channel by an integer factor; output clamped to [0, 255]."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    h, w = image.shape[-2:]
    return np.clip(resize(image, h * factor, w * factor), 0, 255)


def bicubic_downscale(hr: np.ndarray, factor: int = 3) -> np.ndarray:
    """Anti-aliased bicubic downscale. Spatial dims must be divisible by ``factor``."""
    h, w = hr.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"spatial dims {h}x{w} not divisible by {factor}; use crop_to_multiple first")
    return np.clip(resize(hr, h // factor, w // factor, antialias=True), 0, 255)


def crop_to_multiple(x: np.ndarray, factor: int = 3) -> np.ndarray:
    h, w = x.shape[-2:]
    return x[..., : h - h % factor, : w - w % factor]
