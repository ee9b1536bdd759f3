from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsrkit import tensor as T
from qsrkit import zoo
from qsrkit.data import make_pair
from qsrkit.graph import ModelGraph, Node, forward
from qsrkit.quant import (
    MAX_ACCUMULATION, PIXEL_QPARAMS, QuantizationError, QuantParams, accuracy_drop, build_plan, calibrate,
    calibration_images, compute_qparams, dequantize, fake_quant, fake_quant_backward, fuse_activations, qat_finetune,
    qconv2d, quantize, quantize_model, quantize_model_ptq, requantize, requantize_multiplier, round_half_away,
    run_codes, run_integer, simulate, weight_qparams,
)
from qsrkit.quant.fuse import output_producer, stats_key
from qsrkit.quant.params import rounding_right_shift
from qsrkit.training import Constant, TrainConfig, fit

from conftest import randomize, smooth_image


def test_round_half_away_from_zero():
    np.testing.assert_array_equal(round_half_away(np.array([0.5, 1.5, 2.5, -0.5, -2.5, 0.49])),
                                  [1, 2, 3, -1, -3, 0])


def test_pixel_range_gives_unit_scale():
    qp = compute_qparams(0.0, 255.0)
    assert qp.scale == 1.0 and qp.zero_point == 0


def test_degenerate_range_falls_back_to_unit_scale():
    qp = compute_qparams(0.0, 0.0)
    assert qp.scale == 1.0 and qp.zero_point == 0


def test_min_above_max_is_rejected():
    with pytest.raises(QuantizationError):
        compute_qparams(1.0, -1.0)


def test_signed_range_round_trip_on_dense_grid():
    qp = compute_qparams(-1.0, 1.0, signed=True)
    grid = np.linspace(-1, 1, 20001)
    assert np.abs(grid - dequantize(quantize(grid, qp), qp)).max() <= qp.scale / 2 + 1e-12


def test_range_is_extended_to_contain_zero():
    qp = compute_qparams(3.0, 10.0)
    assert qp.zero_point == 0 and qp.scale == pytest.approx(10 / 255, rel=1e-6)
    qp = compute_qparams(-10.0, -3.0)
    assert qp.zero_point == 255


def test_zero_is_exact_and_clamping():
    qp = compute_qparams(-0.7, 2.3)
    assert quantize(0.0, qp) == qp.zero_point
    assert dequantize(quantize(0.0, qp), qp) == 0.0
    assert quantize(1e6, qp) == 255 and quantize(-1e6, qp) == 0


@settings(max_examples=60, deadline=None)
@given(st.floats(-1e3, 0), st.floats(0, 1e3), st.integers(0, 2 ** 31))
def test_round_trip_error_is_at_most_half_scale(lo, hi, seed):
    qp = compute_qparams(lo, hi)
    x = np.random.default_rng(seed).uniform(*qp.real_range(), 200)
    assert np.all(np.abs(x - dequantize(quantize(x, qp), qp)) <= qp.scale / 2 * (1 + 1e-6))


def test_qparams_validation():
    with pytest.raises(QuantizationError):
        QuantParams(0.0, 0)
    with pytest.raises(QuantizationError):
        QuantParams(1.0, 300)
    with pytest.raises(QuantizationError):
        QuantParams(np.ones(3, np.float32), np.array([0, 1, 0]), signed=True)


def test_weight_qparams_are_symmetric_per_channel(rng):
    w = rng.normal(size=(4, 3, 3, 3))
    w[2] = 0
    qp = weight_qparams(w)
    assert qp.per_channel and np.all(qp.zero_point == 0) and qp.qmin == -127 and qp.qmax == 127
    q = quantize(w, qp)
    assert np.abs(q).max() == 127 and not np.any(q[2])
    err = np.abs(dequantize(q, qp) - w).reshape(4, -1).max(axis=1)
    assert np.all(err <= qp.scale / 2 * (1 + 1e-6))


def test_fake_quant_identity_on_integers():
    x = np.arange(0, 256, dtype=np.float32).reshape(1, 1, 16, 16)
    np.testing.assert_array_equal(fake_quant(x, PIXEL_QPARAMS), x)


def test_fake_quant_straight_through(rng):
    qp = compute_qparams(-1.0, 1.0)
    t = np.array([-2.0, -0.3, 0.0, 0.9, 1.5])
    g = rng.normal(size=5)
    np.testing.assert_array_equal(fake_quant_backward(g, t, qp), g * np.array([0, 1, 1, 1, 0]))


def test_requantize_multiplier_half_against_rationals():
    m0, shift = requantize_multiplier(0.5)
    assert m0 == 2 ** 30
    assert Fraction(m0) * Fraction(2) ** (-31 - shift) == Fraction(1, 2)
    vals = np.array([-2 ** 31 + 1, -12345, -3, -1, 0, 1, 3, 7, 2 ** 20 + 1, 2 ** 31 - 1], dtype=np.int64)
    for v, r in zip(vals, requantize(vals, m0, shift)):
        exact = Fraction(int(v)) * Fraction(m0) * Fraction(2) ** (-31 - shift)
        floor = exact.numerator // exact.denominator
        frac = exact - floor
        away = floor + (1 if frac > Fraction(1, 2) or (frac == Fraction(1, 2) and exact > 0) else 0)
        assert r == away


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 100.0), st.integers(-2 ** 31 + 1, 2 ** 31 - 1))
def test_requantize_matches_rational_rounding(m, v):
    m0, shift = requantize_multiplier(m)
    assert 2 ** 30 <= m0 < 2 ** 31
    mult = Fraction(m0) * Fraction(2) ** (-31 - shift)
    assert abs(mult - Fraction(m)) <= Fraction(m) * Fraction(1, 2 ** 30)
    exact = Fraction(v) * mult
    got = int(requantize(np.int64(v), m0, shift))
    assert abs(Fraction(got) - exact) <= Fraction(1, 2)


def test_rounding_right_shift_edge_cases():
    v = np.array([5, -5, 6, -6], dtype=np.int64)
    np.testing.assert_array_equal(rounding_right_shift(v, 1), [3, -3, 3, -3])
    np.testing.assert_array_equal(rounding_right_shift(v, 0), v)
    np.testing.assert_array_equal(rounding_right_shift(v, -2), v * 4)
    np.testing.assert_array_equal(rounding_right_shift(v, 70), [0, 0, 0, 0])


def test_zero_weight_conv_outputs_zero_point(rng):
    spec = T.ConvSpec(4, 5, 3)
    x = rng.integers(0, 256, (1, 4, 6, 7))
    y = qconv2d(x, 17, np.zeros((5, 4, 3, 3), np.int8), np.zeros(5, np.int32), spec,
                np.tile([2 ** 30, 0], (5, 1)), 42, (0, 255))
    assert y.shape == (1, 5, 6, 7) and np.all(y == 42)


def test_qconv_matches_float_simulation(rng):
    cin, cout = 6, 4
    w = rng.normal(size=(cout, cin, 3, 3)) * 0.2
    b = rng.normal(size=cout)
    s_in, zp_in = 0.05, 30
    out_qp = compute_qparams(-4.0, 6.0)
    wq = weight_qparams(w)
    qw = quantize(w, wq)
    qb = round_half_away(b / (s_in * wq.scale)).astype(np.int64)
    requant = np.array([requantize_multiplier(s_in * s / out_qp.scale) for s in wq.scale])
    x = rng.integers(0, 256, (2, cin, 7, 8))
    y = qconv2d(x, zp_in, qw, qb, T.ConvSpec(cin, cout, 3), requant, out_qp.zero_point, (0, 255))
    real = T.conv2d((x - zp_in) * s_in, T.ConvSpec(cin, cout, 3, weights=dequantize(qw, wq),
                                                   bias=qb * s_in * wq.scale))
    ref = quantize(real, out_qp)
    assert np.abs(y - ref).max() <= 1


def identity_model(c=3):
    w = np.zeros((c, c, 3, 3), np.float32)
    w[np.arange(c), np.arange(c), 1, 1] = 1
    nodes = [Node("input", "input"),
             Node("conv", "conv", ("input",), {"in_channels": c, "out_channels": c, "kernel": [3, 3]}),
             Node("clip", "clipped_relu", ("conv",), {"max": 255.0})]
    g = ModelGraph("identity", nodes, {"conv.weight": w, "conv.bias": np.zeros(c, np.float32)}, "clip", scale=1)
    g.validate()
    return g


def test_identity_model_is_exact_end_to_end(rng):
    g = identity_model()
    x = rng.integers(0, 256, (2, 3, 9, 11)).astype(np.float32)
    q = quantize_model_ptq(g, calibrate(g, [x[:1]]))
    assert q.act["input"] == PIXEL_QPARAMS and q.act["conv"] == PIXEL_QPARAMS
    np.testing.assert_array_equal(run_integer(q, x), x)


def test_activation_fusion_keeps_output_activation():
    fused = fuse_activations(zoo.build("xlsr"))
    assert "relu" not in [n.op for n in fused.nodes]
    assert output_producer(fused).attrs["act"] == "clipped_relu"
    assert all(n.attrs.get("act") in (None, "relu", "clipped_relu") for n in fused.nodes)


def test_calibration_records_constants_and_is_lattice(rng):
    g = identity_model()
    const = np.full((1, 3, 5, 5), 128.0, np.float32)
    st1 = calibrate(g, [const])
    assert st1["conv"] == (0.0, 128.0) and st1["input"] == (0.0, 128.0)
    m = randomize(zoo.build("abpn", seed=0, width=8), seed=1)
    a, b = (rng.uniform(0, 255, (1, 3, 8, 8)).astype(np.float32) for _ in range(2))
    sa, sb, sab = calibrate(m, [a]), calibrate(m, [b]), calibrate(m, [a, b])
    for k in sab.ranges:
        assert sab[k] == (min(sa[k][0], sb[k][0]), max(sa[k][1], sb[k][1]))
        assert sab[k][0] <= 0 <= sab[k][1]


def test_ema_calibration_and_errors(rng):
    m = zoo.build("fastsr", seed=0)
    imgs = [rng.uniform(0, 255, (1, 3, 6, 6)).astype(np.float32) for _ in range(3)]
    st = calibrate(m, imgs, method="ema", momentum=0.5)
    assert st.count == 3 and all(lo <= hi for lo, hi in st.ranges.values())
    with pytest.raises(QuantizationError):
        calibrate(m, [])
    with pytest.raises(QuantizationError):
        calibrate(m, imgs, method="percentile")


def test_missing_stat_names_the_node(rng):
    m = randomize(zoo.build("abpn", seed=0, width=8), seed=1)
    st = calibrate(m, [rng.uniform(0, 255, (1, 3, 6, 6)).astype(np.float32)])
    victim = stats_key(fuse_activations(m).node("conv2"))
    del st.ranges[victim]
    with pytest.raises(QuantizationError, match=victim):
        build_plan(m, st)


def test_accumulator_bound_is_enforced():
    c = 64
    nodes = [Node("input", "input"),
             Node("wide", "conv", ("input",), {"in_channels": 3, "out_channels": c, "kernel": [3, 3]}),
             Node("deep", "conv", ("wide",), {"in_channels": c, "out_channels": 3, "kernel": [23, 23]})]
    params = {"wide.weight": np.ones((c, 3, 3, 3), np.float32), "wide.bias": np.zeros(c, np.float32),
              "deep.weight": np.ones((3, c, 23, 23), np.float32), "deep.bias": np.zeros(3, np.float32)}
    g = ModelGraph("deep", nodes, params, "deep", scale=1)
    assert 23 * 23 * c > MAX_ACCUMULATION
    st = calibrate(g, [np.ones((1, 3, 2, 2), np.float32)])
    with pytest.raises(QuantizationError, match="deep"):
        quantize_model(build_plan(g, st))


def test_output_is_pinned_and_clamped(rng):
    m = randomize(zoo.build("abpn", seed=0, width=8), seed=1)
    x = rng.uniform(0, 255, (1, 3, 6, 6)).astype(np.float32)
    q = quantize_model_ptq(m, calibrate(m, [x]))
    assert q.act[q.graph.output] == PIXEL_QPARAMS and q.act["input"] == PIXEL_QPARAMS
    codes = run_codes(q, x)
    assert codes.dtype.kind == "i" and codes.min() >= 0 and codes.max() <= 255
    np.testing.assert_array_equal(run_integer(q, x), codes.astype(np.float32))


def test_bias_scale_is_input_times_weight_scale(rng):
    m = randomize(zoo.build("xlsr", seed=0), seed=2)
    q = quantize_model_ptq(m, calibrate(m, [rng.uniform(0, 255, (1, 3, 8, 8)).astype(np.float32)]))
    fused = fuse_activations(m)
    for n in q.graph.nodes:
        if n.op != "conv":
            continue
        s_acc = q.act[n.inputs[0]].scale * q.weight_qparams[n.name].scale
        got = q.graph.params[f"{n.name}.bias"] * s_acc
        assert np.all(np.abs(got - fused.params[f"{n.name}.bias"]) <= s_acc / 2 * (1 + 1e-6))
        assert q.graph.params[f"{n.name}.weight"].dtype == np.int8
        assert q.graph.params[f"{n.name}.bias"].dtype == np.int32


@pytest.mark.parametrize("arch", ["abpn", "xlsr", "tinysrnet", "fastsr", "prpsr", "edsr_attn"])
def test_integer_path_matches_simulation(arch, rng):
    m = randomize(zoo.build(arch, seed=1), seed=5)
    calib = [rng.uniform(0, 255, (1, 3, 8, 8)).astype(np.float32) for _ in range(2)]
    q = quantize_model_ptq(m, calibrate(m, calib))
    x = rng.uniform(0, 255, (1, 3, 8, 10)).astype(np.float32)
    assert np.abs(run_integer(q, x) - simulate(q, x)).max() <= 1


def test_plan_simulation_tracks_float_model(rng):
    m = randomize(zoo.build("abpn", seed=0), seed=3)
    imgs = [smooth_image(rng, 12, 12) for _ in range(2)]
    plan = build_plan(m, calibrate(m, imgs))
    err = np.abs(simulate(plan, imgs[0]) - forward(m, imgs[0], dtype=np.float64))
    assert err.mean() < 3.0


def test_qat_recovers_ptq_degradation():
    gen = np.random.default_rng(11)
    data = [make_pair(smooth_image(gen, 48, 48), f"{i}") for i in range(4)]
    cfg = TrainConfig(patch_size=12, batch_size=4, iterations=150, seed=1, schedule=Constant(2e-3))
    m, _ = fit(randomize(zoo.build("xlsr", seed=0, width=8), seed=4, scale=0.2), data, cfg)
    # calibrating on darkened inputs gives ranges that clip, a deliberately degraded PTQ
    plan = build_plan(m, calibrate(m, [im * 0.3 for im in calibration_images(data)]))
    before, _ = accuracy_drop(m, quantize_model(plan), data)
    tuned, _ = qat_finetune(plan, data, TrainConfig(patch_size=12, batch_size=4, iterations=60, seed=2,
                                                    schedule=Constant(5e-4)))
    after, _ = accuracy_drop(m, quantize_model(tuned), data)
    assert tuned.act == plan.act
    assert before > 1.0 and after < before


def test_accuracy_drop_requires_data():
    g = identity_model()
    with pytest.raises(ValueError):
        accuracy_drop(g, g, [])
