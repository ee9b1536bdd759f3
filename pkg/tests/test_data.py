import numpy as np
import pytest
from PIL import Image

from qsrkit.data import (
    DatasetError, DatasetLayout, ImageFormatError, ImagePair, extract_patches, load_image, make_pair, save_image,
    scan_dataset,
)
from qsrkit.evaluation import psnr
from qsrkit.resample import bicubic_downscale, bicubic_upscale, crop_to_multiple, resize_matrix
from qsrkit.tensor import nearest_upsample

from conftest import smooth_image


def test_png_round_trip_is_lossless(tmp_path, rng):
    img = rng.integers(0, 256, (1, 3, 17, 23)).astype(np.float32)
    save_image(img, tmp_path / "a.png")
    back = load_image(tmp_path / "a.png")
    assert back.shape == (1, 3, 17, 23) and back.dtype == np.float32
    np.testing.assert_array_equal(back, img)
    save_image(back, tmp_path / "b.png")
    assert np.array_equal(np.asarray(Image.open(tmp_path / "a.png")), np.asarray(Image.open(tmp_path / "b.png")))


def test_grayscale_is_expanded_to_three_channels(tmp_path, rng):
    g = rng.integers(0, 256, (8, 9)).astype(np.uint8)
    Image.fromarray(g, mode="L").save(tmp_path / "g.png")
    img = load_image(tmp_path / "g.png")
    assert img.shape == (1, 3, 8, 9)
    for c in range(3):
        np.testing.assert_array_equal(img[0, c], g)


def test_sixteen_bit_png_is_rejected(tmp_path):
    Image.fromarray(np.full((4, 4), 40000, np.uint16)).save(tmp_path / "d.png")
    with pytest.raises(ImageFormatError, match="unsupported"):
        load_image(tmp_path / "d.png")


def test_unreadable_file_is_a_format_error(tmp_path):
    (tmp_path / "x.png").write_bytes(b"not a png")
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "x.png")


def test_image_pair_requires_exact_scale():
    with pytest.raises(ValueError):
        ImagePair(np.zeros((1, 3, 4, 4)), np.zeros((1, 3, 12, 13)), "bad")


def test_downscale_constant_and_dims():
    x = np.full((1, 3, 12, 18), 77.0)
    y = bicubic_downscale(x, 3)
    assert y.shape == (1, 3, 4, 6)
    np.testing.assert_allclose(y, 77.0, atol=1e-9)
    np.testing.assert_allclose(bicubic_upscale(y, 3), 77.0, atol=1e-9)


def test_downscale_requires_divisible_dims():
    with pytest.raises(ValueError, match="crop_to_multiple"):
        bicubic_downscale(np.zeros((1, 3, 10, 9)), 3)
    assert crop_to_multiple(np.zeros((1, 3, 10, 11)), 3).shape == (1, 3, 9, 9)


def test_downscale_of_nearest_upscale_recovers_input(rng):
    x = smooth_image(rng, 40, 50, noise=0.0)
    back = bicubic_downscale(nearest_upsample(x, 3), 3)
    assert np.abs(back - x).mean() < 1.0


def test_resize_rows_are_normalized():
    for n_in, n_out in ((10, 30), (30, 10), (7, 7)):
        np.testing.assert_allclose(resize_matrix(n_in, n_out).sum(axis=1), 1.0)


def test_bicubic_upscale_interpolates_linear_ramp_in_interior():
    ramp = np.tile(np.arange(20.0) * 5, (20, 1))[None, None]
    up = bicubic_upscale(ramp, 3)
    # Keys cubic reproduces linear functions exactly away from the borders
    expected = ((np.arange(60) + 0.5) / 3 - 0.5) * 5
    np.testing.assert_allclose(up[0, 0, 30, 9:-9], expected[9:-9], atol=1e-9)


def make_tree(root, split, n, rng, with_lr=True):
    layout = DatasetLayout(root, split)
    layout.hr_dir.mkdir(parents=True)
    if with_lr:
        layout.lr_dir.mkdir(parents=True)
    for i in range(n):
        pair = make_pair(smooth_image(rng, 48, 60), f"{i:04d}")
        save_image(pair.hr, layout.hr_dir / f"{pair.id}.png")
        if with_lr:
            save_image(pair.lr, layout.lr_path(pair.id))
    return layout


def test_scan_dataset_pairs_sorted_by_stem(tmp_path, rng):
    layout = make_tree(tmp_path, "train", 3, rng)
    pairs = scan_dataset(layout)
    assert [p.id for p in pairs] == ["0000", "0001", "0002"]
    assert pairs[0].hr.shape[-2:] == (48, 60) and pairs[0].lr.shape[-2:] == (16, 20)


def test_scan_dataset_generates_lr_when_missing(tmp_path, rng):
    layout = make_tree(tmp_path, "valid", 2, rng, with_lr=False)
    pairs = scan_dataset(layout)
    np.testing.assert_array_equal(pairs[0].lr, np.clip(np.floor(bicubic_downscale(pairs[0].hr) + 0.5), 0, 255))


def test_scan_dataset_names_unpaired_stem(tmp_path, rng):
    layout = make_tree(tmp_path, "train", 2, rng)
    layout.lr_path("0001").unlink()
    with pytest.raises(DatasetError, match="0001"):
        scan_dataset(layout)


def test_scan_dataset_missing_dir(tmp_path):
    with pytest.raises(DatasetError, match="not found"):
        scan_dataset(DatasetLayout(tmp_path, "train"))


def test_layout_follows_div2k_naming(tmp_path):
    lay = DatasetLayout(tmp_path, "valid")
    assert lay.hr_dir == tmp_path / "DIV2K_valid_HR"
    assert lay.lr_path("0801") == tmp_path / "DIV2K_valid_LR_bicubic" / "X3" / "0801x3.png"


def test_patches_are_aligned_and_sized(rng):
    pair = make_pair(smooth_image(rng, 120, 150), "p")
    lr, hr = extract_patches(pair, 32, np.random.default_rng(5))
    assert lr.shape == (1, 3, 32, 32) and hr.shape == (1, 3, 96, 96)
    assert np.abs(bicubic_downscale(hr) - lr).mean() < 2.0
    assert 0 < psnr(bicubic_upscale(lr, 3), hr) < np.inf


def test_patch_sequence_is_seeded(rng):
    pair = make_pair(smooth_image(rng, 90, 90), "p")
    a = [extract_patches(pair, 8, np.random.default_rng(9))[0] for _ in range(2)]
    np.testing.assert_array_equal(a[0], a[1])


def test_patch_larger_than_image_fails(rng):
    pair = make_pair(smooth_image(rng, 30, 30), "small")
    with pytest.raises(DatasetError, match="small"):
        extract_patches(pair, 11, rng)
