"""PNG I/O, DIV2K-layout scanning, LR generation and aligned patch sampling."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .resample import bicubic_downscale, crop_to_multiple

SCALE = 3


class ImageFormatError(ValueError):
    """Unreadable file, or a pixel format outside 8-bit RGB / grayscale."""

    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


class DatasetError(ValueError):
    pass


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG into a (1, 3, h, w) float32 tensor with values 0..255.

    Grayscale and palette images are expanded to three identical channels.
    """
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I", "F") or im.info.get("bitdepth", 8) > 8:
                raise ImageFormatError(path, f"unsupported {mode} (16-bit/float) image; only 8-bit PNGs are read")
            if mode == "P":
                im = im.convert("RGB")
                mode = "RGB"
            if mode == "L":
                arr = np.asarray(im, dtype=np.uint8)[None].repeat(3, axis=0)
            elif mode == "RGB":
                arr = np.asarray(im, dtype=np.uint8).transpose(2, 0, 1)
            else:
                raise ImageFormatError(path, f"unsupported pixel mode {mode}")
    except ImageFormatError:
        raise
    except (OSError, ValueError) as e:
        raise ImageFormatError(path, f"cannot decode image ({e})") from e
    return np.ascontiguousarray(arr[None], dtype=np.float32)


def to_uint8(t: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(t, np.float64) + 0.5), 0, 255).astype(np.uint8)


def save_image(t: np.ndarray, path) -> None:
    """Write a (1, 3, h, w) or (3, h, w) tensor as an RGB PNG (rounded, clamped)."""
    t = np.asarray(t)
    if t.ndim == 4:
        if t.shape[0] != 1:
            raise ValueError("save_image writes a single image; batch size must be 1")
        t = t[0]
    Image.fromarray(to_uint8(t).transpose(1, 2, 0), "RGB").save(path)


@dataclass
class ImagePair:
    lr: np.ndarray
    hr: np.ndarray
    id: str

    def __post_init__(self):
        lh, lw = self.lr.shape[-2:]
        if self.hr.shape[-2:] != (SCALE * lh, SCALE * lw):
            raise DatasetError(f"{self.id}: HR {self.hr.shape[-2:]} is not 3x LR {self.lr.shape[-2:]}")


def make_lr(hr: np.ndarray, factor: int = SCALE) -> np.ndarray:
    """Bicubic LR counterpart of ``hr``, rounded to 8-bit levels as if stored as PNG."""
    return to_uint8(bicubic_downscale(hr, factor)).astype(np.float32)


def make_pair(hr: np.ndarray, id: str = "", factor: int = SCALE) -> ImagePair:
    hr = np.ascontiguousarray(crop_to_multiple(np.asarray(hr, np.float32), factor))
    return ImagePair(make_lr(hr, factor), hr, id)


@dataclass
class DatasetLayout:
    """DIV2K directory convention under ``root``.

    HR: ``DIV2K_<split>_HR/<stem>.png``;
    LR: ``DIV2K_<split>_LR_bicubic/X3/<stem>x3.png``.
    """

    root: Path
    split: str = "train"

    def __post_init__(self):
        self.root = Path(self.root)
        if self.split not in ("train", "valid"):
            raise ValueError("split must be 'train' or 'valid'")

    @property
    def hr_dir(self) -> Path:
        return self.root / f"DIV2K_{self.split}_HR"

    @property
    def lr_dir(self) -> Path:
        return self.root / f"DIV2K_{self.split}_LR_bicubic" / f"X{SCALE}"

    def lr_path(self, stem: str) -> Path:
        return self.lr_dir / f"{stem}x{SCALE}.png"

    def exists(self) -> bool:
        return self.hr_dir.is_dir()


def scan_dataset(layout: DatasetLayout, limit: int | None = None) -> list[ImagePair]:
    """Load pairs sorted by stem. Official LR files are used when the LR directory exists,
    otherwise LR images are generated by bicubic downscaling."""
    if not layout.hr_dir.is_dir():
        raise DatasetError(f"HR directory not found: {layout.hr_dir}")
    stems = sorted(p.stem for p in layout.hr_dir.glob("*.png"))
    if not stems:
        raise DatasetError(f"no PNG files in {layout.hr_dir}")
    use_lr = layout.lr_dir.is_dir()
    if use_lr:
        lr_stems = {p.stem[: -len(f"x{SCALE}")] for p in layout.lr_dir.glob(f"*x{SCALE}.png")}
        missing_lr = [s for s in stems if s not in lr_stems]
        missing_hr = sorted(lr_stems - set(stems))
        if missing_lr or missing_hr:
            raise DatasetError(f"unpaired files: no LR for {missing_lr}, no HR for {missing_hr}")
    pairs = []
    for stem in stems[:limit]:
        hr = load_image(layout.hr_dir / f"{stem}.png")
        if use_lr:
            lr = load_image(layout.lr_path(stem))
            h, w = lr.shape[-2:]
            pairs.append(ImagePair(lr, np.ascontiguousarray(hr[..., : SCALE * h, : SCALE * w]), stem))
        else:
            pairs.append(make_pair(hr, stem))
    return pairs


def extract_patches(pair: ImagePair, lr_size: int, rng: np.random.Generator):
    """Uniformly sample an aligned patch: HR offset and size are 3x the LR ones."""
    h, w = pair.lr.shape[-2:]
    if lr_size > h or lr_size > w:
        raise DatasetError(f"{pair.id}: patch {lr_size} larger than LR image {h}x{w}")
    y = int(rng.integers(0, h - lr_size + 1))
    x = int(rng.integers(0, w - lr_size + 1))
    lr = pair.lr[..., y:y + lr_size, x:x + lr_size]
    hr = pair.hr[..., SCALE * y:SCALE * (y + lr_size), SCALE * x:SCALE * (x + lr_size)]
    return lr, hr


def sample_images(names=None) -> list[tuple[str, np.ndarray]]:
    """Natural test photographs bundled with scikit-image, as (1, 3, h, w) tensors.

    Used as a stand-in corpus when DIV2K is not available locally.
    """
    from skimage import data as skdata

    names = names or SAMPLE_TRAIN + SAMPLE_VALID
    out = []
    for name in names:
        img = np.asarray(getattr(skdata, name)())
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        out.append((name, np.ascontiguousarray(img[..., :3].transpose(2, 0, 1)[None], dtype=np.float32)))
    return out


SAMPLE_TRAIN = ["astronaut", "coffee", "rocket", "retina", "hubble_deep_field", "immunohistochemistry", "camera",
                "brick"]
SAMPLE_VALID = ["chelsea", "coins", "moon", "clock"]
DIV2K_ENV = "QSR_DIV2K_ROOT"


def sample_pairs(split: str = "train") -> list[ImagePair]:
    """Stand-in training or validation pairs built from the bundled photographs."""
    names = {"train": SAMPLE_TRAIN, "valid": SAMPLE_VALID}[split]
    return [make_pair(img, name) for name, img in sample_images(names)]


def write_sample_dataset(root, splits=("train", "valid")) -> Path:
    """Write the bundled photographs as a DIV2K-style tree (HR and generated LR) under ``root``."""
    root = Path(root)
    for split in splits:
        layout = DatasetLayout(root, split)
        layout.hr_dir.mkdir(parents=True, exist_ok=True)
        layout.lr_dir.mkdir(parents=True, exist_ok=True)
        for pair in sample_pairs(split):
            save_image(pair.hr, layout.hr_dir / f"{pair.id}.png")
            save_image(pair.lr, layout.lr_path(pair.id))
    return root


def div2k_root() -> Path | None:
    """Root of a local DIV2K copy named by the environment, if it exists."""
    root = os.environ.get(DIV2K_ENV)
    if root and DatasetLayout(root, "train").exists():
        return Path(root)
    return None
