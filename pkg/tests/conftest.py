import numpy as np
import pytest

from qsrkit.data import ImagePair, make_pair

ACCEPTANCE_LINES: list[str] = []


def randomize(model, seed, scale=0.05, bias_scale=1.0):
    """Fill all-zero weight tensors (zero-initialised tails) and biases with random values."""
    rng = np.random.default_rng(seed)
    for k, v in model.params.items():
        if k.endswith(".weight") and not v.any():
            model.params[k] = rng.normal(0, scale, v.shape).astype(np.float32)
        elif k.endswith(".bias"):
            model.params[k] = (v + rng.normal(0, bias_scale, v.shape)).astype(np.float32)
    return model


def smooth_image(rng, h, w, noise=4.0):
    """Natural-ish test image: low-frequency colour field plus mild noise, in [0, 255]."""
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    chans = []
    for _ in range(3):
        f = rng.uniform(1, 4, 2)
        ph = rng.uniform(0, 2 * np.pi, 2)
        chans.append(np.sin(2 * np.pi * f[0] * yy + ph[0]) * np.cos(2 * np.pi * f[1] * xx + ph[1]))
    img = 127.5 + 100 * np.stack(chans) + rng.normal(0, noise, (3, h, w))
    return np.clip(np.rint(img), 0, 255).astype(np.float32)[None]


def smooth_pairs(n, size=96, seed=0) -> list[ImagePair]:
    rng = np.random.default_rng(seed)
    return [make_pair(smooth_image(rng, size, size), f"img{i:02d}") for i in range(n)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
