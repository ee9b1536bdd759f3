from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AugmentFlags:
    flip_h: bool = True
    flip_v: bool = True
    rot90: bool = True


NO_AUGMENT = AugmentFlags(False, False, False)


def flip_h(t: np.ndarray) -> np.ndarray:
    return t[..., ::-1]


def flip_v(t: np.ndarray) -> np.ndarray:
    return t[..., ::-1, :]


def rot90(t: np.ndarray, k: int = 1) -> np.ndarray:
    return np.rot90(t, k, axes=(-2, -1))


def augment(lr: np.ndarray, hr: np.ndarray, flags: AugmentFlags, rng: np.random.Generator):
    """Apply one random flip/rotation, identically, to an aligned (LR, HR) pair."""
    if hr.shape[-2] != 3 * lr.shape[-2] or hr.shape[-1] != 3 * lr.shape[-1]:
        raise ValueError(f"misaligned pair: LR {lr.shape[-2:]} vs HR {hr.shape[-2:]}")
    # draws are made for every flag so the random stream does not depend on the flags
    fh, fv, k = rng.random() < 0.5, rng.random() < 0.5, int(rng.integers(4))
    if flags.flip_h and fh:
        lr, hr = flip_h(lr), flip_h(hr)
    if flags.flip_v and fv:
        lr, hr = flip_v(lr), flip_v(hr)
    if flags.rot90 and k:
        lr, hr = rot90(lr, k), rot90(hr, k)
    return np.ascontiguousarray(lr), np.ascontiguousarray(hr)
