import numpy as np
import pytest

from qsrkit import zoo
from qsrkit.graph import GraphError, ModelGraph, Node, forward
from qsrkit.resample import bicubic_upscale
from qsrkit.tensor import nearest_upsample

ARCHS = ["abpn", "xlsr", "tinysrnet", "fastsr", "prpsr", "edsr_attn"]


@pytest.mark.parametrize("arch", ARCHS)
def test_output_is_three_times_input(arch, rng):
    m = zoo.build(arch, seed=0)
    x = rng.uniform(0, 255, (2, 3, 10, 12)).astype(np.float32)
    y = zoo.forward(m, x)
    assert y.shape == (2, 3, 30, 36)
    assert y.min() >= 0 and y.max() <= 255


@pytest.mark.parametrize("arch", ARCHS)
def test_default_size_near_published(arch):
    kb = zoo.build(arch).model_size_bytes / 1000
    ref = zoo.REFERENCE_SIZE_KB[arch]
    assert abs(kb - ref) / ref <= 0.25


def test_xlsr_width_must_divide_by_four():
    with pytest.raises(ValueError, match="4"):
        zoo.build_xlsr(width=30)


def test_xlsr_uses_grouped_convs():
    m = zoo.build_xlsr()
    assert any(n.attrs.get("groups", 1) == 4 for n in m.nodes if n.op == "conv")


def test_prpsr_inference_has_no_additions():
    m = zoo.build_prpsr(mode="inference")
    assert m.count("add") == 0
    t = zoo.build_prpsr(mode="train")
    assert t.count("add") == 10


def test_prpsr_mode_checked():
    with pytest.raises(ValueError):
        zoo.build_prpsr(mode="eval")


@pytest.mark.parametrize("arch", ["abpn", "fastsr"])
def test_zeroed_learnable_path_is_nearest_upscale(arch, rng):
    m = zoo.zero_learnable_path(zoo.build(arch, seed=3))
    x = rng.integers(0, 256, (1, 3, 7, 9)).astype(np.float32)
    np.testing.assert_array_equal(zoo.forward(m, x), nearest_upsample(x, 3))


def test_tinysrnet_rejects_odd_input():
    with pytest.raises(GraphError):
        zoo.forward(zoo.build("tinysrnet"), np.zeros((1, 3, 7, 8), np.float32))


def test_bicubic_baseline_matches_resampler(rng):
    x = rng.uniform(0, 255, (1, 3, 8, 8)).astype(np.float32)
    np.testing.assert_allclose(zoo.forward(zoo.build("bicubic"), x), bicubic_upscale(x, 3))


def test_same_seed_same_weights():
    a, b = zoo.build("abpn", seed=4), zoo.build("abpn", seed=4)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    c = zoo.build("abpn", seed=5)
    assert not np.array_equal(a.params["conv1.weight"], c.params["conv1.weight"])


def test_unknown_architecture():
    with pytest.raises(ValueError, match="unknown"):
        zoo.build("srcnn")


def test_forward_rejects_bad_input_shape():
    with pytest.raises(GraphError):
        zoo.forward(zoo.build("abpn"), np.zeros((1, 4, 8, 8), np.float32))


def tiny_graph():
    g = ModelGraph("t", [Node("input", "input"), Node("r", "relu", ("input",))], {}, "r")
    g.validate()
    return g


def test_validate_detects_dangling_and_cycles():
    g = tiny_graph()
    g.nodes.append(Node("a", "add", ("r", "later")))
    g.nodes.append(Node("later", "relu", ("a",)))
    with pytest.raises(GraphError, match="a"):
        g.validate()


def test_validate_requires_params_and_known_ops():
    g = tiny_graph()
    g.nodes.append(Node("c", "conv", ("r",), {"in_channels": 3, "out_channels": 3, "kernel": [3, 3]}))
    with pytest.raises(GraphError, match="c.weight"):
        g.validate()
    g = tiny_graph()
    g.nodes.append(Node("z", "softmax", ("r",)))
    with pytest.raises(GraphError, match="softmax"):
        g.validate()


def test_shape_failure_names_the_node():
    g = tiny_graph()
    g.nodes.append(Node("d2s", "depth_to_space", ("r",), {"block": 3}))
    g.output = "d2s"
    with pytest.raises(GraphError) as e:
        forward(g, np.zeros((1, 3, 4, 4), np.float32))
    assert e.value.node == "d2s"


def test_description_round_trip():
    m = zoo.build("xlsr", seed=2)
    again = ModelGraph.from_description(m.describe(), m.params)
    x = np.random.default_rng(0).uniform(0, 255, (1, 3, 6, 6)).astype(np.float32)
    np.testing.assert_array_equal(zoo.forward(m, x), zoo.forward(again, x))


def test_forward_keep_returns_all_nodes(rng):
    m = zoo.build("fastsr")
    vals = forward(m, rng.uniform(0, 255, (1, 3, 4, 4)), keep=True)
    assert set(vals) == {n.name for n in m.nodes}
