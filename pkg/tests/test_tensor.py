import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsrkit import tensor as T


def random_spec(rng, cin, cout, k, groups=1, stride=1, dtype=np.float64):
    w = rng.normal(size=(cout, cin // groups, k, k)).astype(dtype)
    b = rng.normal(size=cout).astype(dtype)
    return T.ConvSpec(cin, cout, k, stride=stride, groups=groups, weights=w, bias=b)


@pytest.mark.parametrize("k,groups", [(1, 1), (3, 1), (5, 1), (3, 2), (3, 4), (1, 4)])
def test_fast_conv_matches_direct_loops(rng, k, groups):
    spec = random_spec(rng, 8, 12, k, groups)
    x = rng.normal(size=(2, 8, 9, 7))
    fast, ref = T.conv2d(x, spec), T.conv2d_reference(x, spec)
    assert fast.shape == (2, 12, 9, 7)
    np.testing.assert_allclose(fast, ref, rtol=1e-5, atol=1e-9)


def test_strided_conv_uses_im2col_and_matches(rng):
    spec = random_spec(rng, 4, 6, 3, stride=2)
    x = rng.normal(size=(1, 4, 11, 10))
    np.testing.assert_allclose(T.conv2d(x, spec), T.conv2d_reference(x, spec), rtol=1e-5, atol=1e-9)


def test_float32_conv_matches_reference(rng):
    spec = random_spec(rng, 5, 7, 3, dtype=np.float32)
    x = rng.normal(size=(1, 5, 16, 13)).astype(np.float32)
    y = T.conv2d(x, spec)
    assert y.dtype == np.float32
    np.testing.assert_allclose(y, T.conv2d_reference(x.astype(np.float64), spec), rtol=1e-4, atol=1e-4)


def test_identity_kernel_returns_input(rng):
    c = 4
    w = np.zeros((c, c, 3, 3))
    w[np.arange(c), np.arange(c), 1, 1] = 1
    x = rng.normal(size=(2, c, 6, 5))
    np.testing.assert_array_equal(T.conv2d(x, T.ConvSpec(c, c, 3, weights=w, bias=np.zeros(c))), x)


def test_grouped_conv_equals_split_and_concat(rng):
    spec = random_spec(rng, 8, 8, 3, groups=4)
    x = rng.normal(size=(1, 8, 7, 7))
    parts = []
    for g in range(4):
        sub = T.ConvSpec(2, 2, 3, weights=spec.weights[2 * g:2 * g + 2], bias=spec.bias[2 * g:2 * g + 2])
        parts.append(T.conv2d_reference(x[:, 2 * g:2 * g + 2], sub))
    np.testing.assert_allclose(T.conv2d(x, spec), np.concatenate(parts, axis=1), rtol=1e-10)


def test_pointwise_sum_of_constant_channels():
    x = np.stack([np.full((4, 4), 3.0), np.full((4, 4), 4.0)])[None]
    spec = T.ConvSpec(2, 1, 1, weights=np.ones((1, 2, 1, 1)), bias=np.zeros(1))
    np.testing.assert_array_equal(T.conv2d(x, spec), np.full((1, 1, 4, 4), 7.0))


def test_conv_channel_mismatch_names_axis():
    spec = T.ConvSpec(3, 4, 3)
    with pytest.raises(T.DimensionError) as e:
        T.conv2d(np.zeros((1, 5, 4, 4)), spec)
    assert e.value.axis == "channels"


def test_conv_spec_rejects_indivisible_groups():
    with pytest.raises(T.DimensionError):
        T.ConvSpec(6, 8, 3, groups=4)


def test_conv_spec_rejects_bad_weight_shape():
    with pytest.raises(T.DimensionError):
        T.ConvSpec(3, 4, 3, weights=np.zeros((4, 3, 1, 1)))


def test_large_input_is_tiled_without_changing_result(rng, monkeypatch):
    spec = random_spec(rng, 3, 4, 3, stride=2)
    x = rng.normal(size=(1, 3, 20, 20))
    whole = T.conv2d(x, spec)
    monkeypatch.setattr(T, "_COLS_BUDGET", 2048)
    np.testing.assert_array_equal(T.conv2d(x, spec), whole)


def test_depth_to_space_shape_and_layout(rng):
    x = rng.normal(size=(1, 9, 2, 2))
    y = T.depth_to_space(x, 3)
    assert y.shape == (1, 1, 6, 6)
    for yy in range(6):
        for xx in range(6):
            assert y[0, 0, yy, xx] == x[0, (yy % 3) * 3 + xx % 3, yy // 3, xx // 3]


def test_depth_to_space_rejects_indivisible_channels():
    with pytest.raises(T.DimensionError):
        T.depth_to_space(np.zeros((1, 8, 2, 2)), 3)


def test_space_to_depth_shape_and_errors():
    assert T.space_to_depth(np.zeros((1, 1, 6, 6)), 3).shape == (1, 9, 2, 2)
    with pytest.raises(T.DimensionError) as e:
        T.space_to_depth(np.zeros((1, 1, 6, 7)), 3)
    assert e.value.axis == "width"


def test_space_to_depth_of_constant_is_constant():
    np.testing.assert_array_equal(T.space_to_depth(np.full((1, 1, 6, 6), 5.0), 3), np.full((1, 9, 2, 2), 5.0))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(1, 2))
def test_depth_space_round_trip(r, h, w, c):
    x = np.random.default_rng(h * 7 + w).normal(size=(1, c * r * r, h, w))
    np.testing.assert_array_equal(T.space_to_depth(T.depth_to_space(x, r), r), x)
    z = np.random.default_rng(1).normal(size=(2, c, h * r, w * r))
    np.testing.assert_array_equal(T.depth_to_space(T.space_to_depth(z, r), r), z)


def test_nine_equal_channels_give_nearest_upscale(rng):
    img = rng.normal(size=(1, 1, 4, 5))
    np.testing.assert_array_equal(T.depth_to_space(np.repeat(img, 9, axis=1), 3), T.nearest_upsample(img, 3))


@pytest.mark.parametrize("r", [1, 2, 3])
def test_stack_repeat_then_depth_to_space_is_nearest(rng, r):
    x = rng.normal(size=(2, 3, 5, 4))
    np.testing.assert_array_equal(T.depth_to_space(T.stack_repeat(x, r * r), r), T.nearest_upsample(x, r))


def test_stack_repeat_channel_count_and_identity(rng):
    x = rng.normal(size=(1, 3, 2, 2))
    assert T.stack_repeat(x, 9).shape == (1, 27, 2, 2)
    np.testing.assert_array_equal(T.stack_repeat(x, 1), x)


def test_nearest_upsample_single_pixel():
    np.testing.assert_array_equal(T.nearest_upsample(np.full((1, 1, 1, 1), 7.0), 3), np.full((1, 1, 3, 3), 7.0))
    x = np.arange(4.0).reshape(1, 1, 2, 2)
    np.testing.assert_array_equal(T.nearest_upsample(x, 1), x)


def test_elementwise_ops():
    assert T.clipped_relu(np.array(300.0), 255) == 255.0
    assert T.clipped_relu(np.array(-4.0), 255) == 0.0
    x = np.random.default_rng(0).normal(size=(1, 2, 3, 3))
    np.testing.assert_array_equal(T.add(x, np.zeros_like(x)), x)
    np.testing.assert_array_equal(T.mul(x, np.ones_like(x)), x)
    np.testing.assert_array_equal(T.relu(x), np.where(x > 0, x, 0))


def test_mul_broadcasts_channel_gate(rng):
    x = rng.normal(size=(1, 2, 3, 3))
    g = rng.normal(size=(1, 2, 1, 1))
    np.testing.assert_array_equal(T.mul(x, g), x * g)


def test_add_shape_mismatch_names_axis():
    with pytest.raises(T.DimensionError) as e:
        T.add(np.zeros((1, 2, 3, 3)), np.zeros((1, 2, 3, 4)))
    assert e.value.axis == "width"


def test_concat_checks_spatial_dims():
    y = T.concat([np.zeros((1, 2, 3, 3)), np.ones((1, 1, 3, 3))])
    assert y.shape == (1, 3, 3, 3)
    with pytest.raises(T.DimensionError):
        T.concat([np.zeros((1, 2, 3, 3)), np.ones((1, 1, 4, 3))])


def test_as_tensor_validates_rank():
    assert T.as_tensor(np.zeros((1, 3, 4, 4), np.uint8)).dtype == np.float32
    with pytest.raises(T.DimensionError):
        T.as_tensor(np.zeros((3, 4, 4)))


def test_ops_preserve_dtype(rng):
    x = rng.normal(size=(1, 9, 2, 2))
    for dt in (np.float32, np.float64):
        xd = x.astype(dt)
        assert T.depth_to_space(xd, 3).dtype == dt
        assert T.relu(xd).dtype == dt
        assert T.conv2d(xd, T.ConvSpec(9, 2, 3)).dtype == dt
