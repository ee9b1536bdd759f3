"""ModelGraph: an ordered DAG of layer nodes with named parameters, and its executor."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import tensor as T

SHAPE_OPS = frozenset({"depth_to_space", "space_to_depth", "stack_repeat", "nearest_upsample"})
ACTIVATIONS = frozenset({"relu", "clipped_relu"})
OPS = frozenset({"input", "conv", "add", "mul", "concat"}) | SHAPE_OPS | ACTIVATIONS


class GraphError(ValueError):
    """Structural or shape failure; ``node`` names where it happened."""

    def __init__(self, message: str, node: str | None = None):
        super().__init__(f"[{node}] {message}" if node else message)
        self.node = node


@dataclass
class Node:
    name: str
    op: str
    inputs: tuple[str, ...] = ()
    attrs: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "op": self.op, "inputs": list(self.inputs), "attrs": dict(self.attrs)}

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        return cls(d["name"], d["op"], tuple(d.get("inputs", ())), dict(d.get("attrs", {})))


@dataclass
class ModelGraph:
    """Nodes are stored in execution order; ``params`` maps ``<node>.weight``/``<node>.bias`` to arrays."""

    name: str
    nodes: list[Node] = field(default_factory=list)
    params: dict[str, np.ndarray] = field(default_factory=dict)
    output: str = ""
    scale: int = 3
    meta: dict[str, Any] = field(default_factory=dict)

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise GraphError("no such node", name)

    @property
    def input_name(self) -> str:
        inputs = [n.name for n in self.nodes if n.op == "input"]
        if len(inputs) != 1:
            raise GraphError(f"graph must have exactly one input node, found {len(inputs)}")
        return inputs[0]

    def consumers(self, name: str) -> list[Node]:
        return [n for n in self.nodes if name in n.inputs]

    def count(self, op: str) -> int:
        return sum(1 for n in self.nodes if n.op == op)

    def conv_spec(self, node: Node | str) -> T.ConvSpec:
        n = self.node(node) if isinstance(node, str) else node
        a = n.attrs
        return T.ConvSpec(
            in_channels=a["in_channels"], out_channels=a["out_channels"], kernel=tuple(a["kernel"]),
            groups=a.get("groups", 1), padding=a.get("padding"),
            weights=self.params[f"{n.name}.weight"], bias=self.params[f"{n.name}.bias"],
        )

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    @property
    def model_size_bytes(self) -> int:
        """Size of the parameters when every weight and bias is stored in one byte."""
        return self.n_params

    def copy(self) -> "ModelGraph":
        return ModelGraph(
            self.name, [Node(n.name, n.op, n.inputs, copy.deepcopy(n.attrs)) for n in self.nodes],
            {k: v.copy() for k, v in self.params.items()}, self.output, self.scale, copy.deepcopy(self.meta),
        )

    def validate(self) -> None:
        """Check ops, acyclicity (nodes only read earlier nodes) and parameter presence."""
        seen: set[str] = set()
        for n in self.nodes:
            if n.op not in OPS:
                raise GraphError(f"unknown op {n.op!r}", n.name)
            if n.name in seen:
                raise GraphError("duplicate node name", n.name)
            for i in n.inputs:
                if i not in seen:
                    raise GraphError(f"input {i!r} is not produced by an earlier node (cycle or dangling edge)",
                                     n.name)
            if n.op == "conv":
                for suffix in ("weight", "bias"):
                    if f"{n.name}.{suffix}" not in self.params:
                        raise GraphError(f"missing parameter {n.name}.{suffix}", n.name)
            seen.add(n.name)
        if self.output not in seen:
            raise GraphError(f"output {self.output!r} is not a node")
        self.input_name  # noqa: B018  (raises when not exactly one)

    def describe(self) -> dict:
        return {"name": self.name, "scale": self.scale, "output": self.output, "meta": self.meta,
                "nodes": [n.to_dict() for n in self.nodes]}

    @classmethod
    def from_description(cls, d: dict, params: dict[str, np.ndarray]) -> "ModelGraph":
        return cls(d["name"], [Node.from_dict(n) for n in d["nodes"]], params, d["output"], d.get("scale", 3),
                   d.get("meta", {}))


def apply_activation(y: np.ndarray, act: str | None, act_max: float | None) -> np.ndarray:
    if act is None:
        return y
    if act == "relu":
        return T.relu(y)
    if act == "clipped_relu":
        return T.clipped_relu(y, act_max)
    raise ValueError(f"unknown activation {act!r}")


def eval_node(graph: ModelGraph, n: Node, args: list[np.ndarray], conv_params=None) -> np.ndarray:
    """Float evaluation of one node; ``conv_params`` optionally overrides (weight, bias)."""
    a = n.attrs
    op = n.op
    if op == "conv":
        spec = graph.conv_spec(n)
        if conv_params is not None:
            spec.weights, spec.bias = conv_params
        y = T.conv2d(args[0], spec)
    elif op == "relu":
        y = T.relu(args[0])
    elif op == "clipped_relu":
        y = T.clipped_relu(args[0], a.get("max", 255.0))
    elif op == "add":
        y = T.add(args[0], args[1])
    elif op == "mul":
        y = T.mul(args[0], args[1])
    elif op == "concat":
        y = T.concat(args)
    elif op == "depth_to_space":
        y = T.depth_to_space(args[0], a["block"])
    elif op == "space_to_depth":
        y = T.space_to_depth(args[0], a["block"])
    elif op == "stack_repeat":
        y = T.stack_repeat(args[0], a["n"])
    elif op == "nearest_upsample":
        y = T.nearest_upsample(args[0], a["factor"])
    else:
        raise GraphError(f"op {op!r} cannot be evaluated", n.name)
    return apply_activation(y, a.get("act"), a.get("act_max"))


def _last_use(graph: ModelGraph) -> dict[str, int]:
    out = {}
    for idx, n in enumerate(graph.nodes):
        for i in n.inputs:
            out[i] = idx
    return out


def forward(graph: ModelGraph, x, *, fake_quant=None, tape: list | None = None,
            dtype=np.float32, keep: bool = False) -> np.ndarray | dict[str, np.ndarray]:
    """Execute ``graph`` on ``x`` of shape (b, 3, h, w).

    ``fake_quant`` is an optional hook object (see ``qsrkit.quant.FakeQuantHooks``) that
    rewrites conv parameters and node outputs to simulate quantization.
    When ``tape`` is a list, per-node records needed for backpropagation are
    appended to it. With ``keep=True`` all node outputs are returned by name.
    """
    x = T.as_tensor(x).astype(dtype, copy=False)
    values: dict[str, np.ndarray] = {}
    release = tape is None and not keep
    last_use = _last_use(graph) if release else {}
    for idx, n in enumerate(graph.nodes):
        try:
            if n.op == "input":
                y = x
                mask = None
                if fake_quant is not None:
                    y, mask = fake_quant.activation(n, y)
                values[n.name] = y
                if tape is not None:
                    tape.append((n, (), x, None, mask))
                continue
            args = [values[i] for i in n.inputs]
            conv_params = None
            if n.op == "conv" and fake_quant is not None:
                conv_params = fake_quant.conv_params(n, graph.params[f"{n.name}.weight"],
                                                     graph.params[f"{n.name}.bias"], dtype)
            elif n.op == "conv" and dtype != np.float32:
                conv_params = (graph.params[f"{n.name}.weight"].astype(dtype),
                               graph.params[f"{n.name}.bias"].astype(dtype))
            y = pre = eval_node(graph, n, args, conv_params)
            mask = None
            if fake_quant is not None:
                y, mask = fake_quant.activation(n, y)
        except T.DimensionError as e:
            raise GraphError(f"{e} (axis: {e.axis})", n.name) from e
        except KeyError as e:
            raise GraphError(f"unresolved reference {e}", n.name) from e
        values[n.name] = y
        if tape is not None:
            tape.append((n, tuple(args), pre, conv_params, mask))
        if release:
            del args, pre
            for i in n.inputs:
                if last_use.get(i) == idx and i != graph.output:
                    values.pop(i, None)
    if keep:
        return values
    return values[graph.output]
