"""Folding the three-branch training block ``x + conv1x1(x) + conv3x3(x)`` into one 3x3 conv."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import GraphError, ModelGraph, Node
from .tensor import ConvSpec, DimensionError


class FoldError(GraphError):
    pass


@dataclass
class RepBranchBlock:
    conv1x1: ConvSpec
    conv3x3: ConvSpec

    def __post_init__(self):
        c = self.conv3x3.in_channels
        for spec, k in ((self.conv1x1, (1, 1)), (self.conv3x3, (3, 3))):
            if spec.in_channels != c or spec.out_channels != c:
                raise DimensionError(
                    f"branch convs must map {c} -> {c} channels, got {spec.in_channels} -> {spec.out_channels}",
                    axis="channels")
            if spec.kernel != k or spec.stride != 1 or spec.groups != 1:
                raise ValueError(f"expected a stride-1, ungrouped {k[0]}x{k[1]} branch")

    @property
    def channels(self) -> int:
        return self.conv3x3.in_channels


def fold_branch(block: RepBranchBlock) -> ConvSpec:
    """Single 3x3 conv equal to the branch sum: kernel ``W3 + centre(W1) + centre(identity)``."""
    c = block.channels
    w3 = np.asarray(block.conv3x3.weights, np.float64)
    k = w3.copy()
    k[:, :, 1, 1] += np.asarray(block.conv1x1.weights, np.float64)[:, :, 0, 0]
    k[np.arange(c), np.arange(c), 1, 1] += 1.0
    bias = np.asarray(block.conv3x3.bias, np.float64) + np.asarray(block.conv1x1.bias, np.float64)
    dtype = block.conv3x3.weights.dtype
    return ConvSpec(c, c, (3, 3), padding=1, weights=k.astype(dtype), bias=bias.astype(dtype))


def _rep_blocks(graph: ModelGraph) -> dict[str, list[Node]]:
    blocks: dict[str, list[Node]] = {}
    for n in graph.nodes:
        tag = n.attrs.get("rep_block")
        if tag is not None:
            blocks.setdefault(tag, []).append(n)
    return blocks


def fold_model(graph: ModelGraph) -> ModelGraph:
    """Replace every training block of a re-parameterizable graph by one conv.

    A graph that is already in inference form is returned unchanged (as a
    copy), so folding is idempotent. Graphs that are neither raise.
    """
    blocks = _rep_blocks(graph)
    if not blocks:
        if graph.meta.get("arch") == "prpsr" and graph.meta.get("mode") == "inference":
            return graph.copy()
        raise FoldError("graph is not a re-parameterizable training graph (no branch blocks found)")
    g = graph.copy()
    replaced: dict[str, str] = {}
    drop: set[str] = set()
    for tag, members in blocks.items():
        by_suffix = {n.name[len(tag) + 1:]: n for n in members if n.name.startswith(tag + ".")}
        if set(by_suffix) != {"conv1", "conv3", "sum1", "sum"}:
            raise FoldError(f"block {tag} is incomplete: has {sorted(by_suffix)}", tag)
        c1, c3, s1, s = (by_suffix[k] for k in ("conv1", "conv3", "sum1", "sum"))
        src = c3.inputs[0]
        if c1.inputs != (src,) or s1.inputs != (src, c1.name) or s.inputs != (s1.name, c3.name):
            raise FoldError(f"block {tag} is not wired as x + conv1x1(x) + conv3x3(x)", tag)
        spec = fold_branch(RepBranchBlock(graph.conv_spec(c1), graph.conv_spec(c3)))
        name = f"{tag}.conv"
        for n in (c1, c3):
            del g.params[f"{n.name}.weight"], g.params[f"{n.name}.bias"]
        g.params[f"{name}.weight"] = spec.weights
        g.params[f"{name}.bias"] = spec.bias
        replaced[s.name] = name
        replaced[c3.name] = name  # position of the new node
        drop |= {c1.name, s1.name, s.name}
        c = spec.in_channels
        g.nodes[[n.name for n in g.nodes].index(c3.name)] = Node(
            name, "conv", (src,), {"in_channels": c, "out_channels": c, "kernel": [3, 3], "groups": 1,
                                    "padding": 1})
    nodes = []
    for n in g.nodes:
        if n.name in drop:
            continue
        n.inputs = tuple(replaced.get(i, i) for i in n.inputs)
        nodes.append(n)
    g.nodes = nodes
    g.output = replaced.get(g.output, g.output)
    g.meta["mode"] = "inference"
    g.validate()
    return g


__all__ = ["FoldError", "RepBranchBlock", "fold_branch", "fold_model"]
