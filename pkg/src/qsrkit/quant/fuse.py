"""Folding standalone activations into the op that produces their input."""

from __future__ import annotations

from ..graph import ACTIVATIONS, SHAPE_OPS, GraphError, ModelGraph, Node

FUSABLE_PRODUCERS = frozenset({"conv", "add", "mul", "concat"})


def fuse_activations(graph: ModelGraph) -> ModelGraph:
    """Return a copy where each relu/clipped_relu whose producer feeds only it is merged into the producer.

    The producer gains ``act``/``act_max`` attrs and remembers the removed
    node in ``act_node``, so calibration statistics recorded on the unfused
    graph stay addressable. Consumers of the activation are redirected.
    """
    g = graph.copy()
    rename: dict[str, str] = {}
    kept: list[Node] = []
    by_name = {n.name: n for n in g.nodes}
    for n in g.nodes:
        n.inputs = tuple(rename.get(i, i) for i in n.inputs)
        if n.op in ACTIVATIONS:
            src = by_name[n.inputs[0]]
            sole = sum(n.inputs[0] in m.inputs for m in g.nodes) == 1
            if (src.op in FUSABLE_PRODUCERS and sole and "act" not in src.attrs
                    and src.name != graph.output):
                src.attrs["act"] = n.op
                if n.op == "clipped_relu":
                    src.attrs["act_max"] = float(n.attrs.get("max", 255.0))
                src.attrs["act_node"] = n.name
                rename[n.name] = src.name
                continue
        kept.append(n)
    g.nodes = kept
    g.output = rename.get(g.output, g.output)
    g.validate()
    return g


def stats_key(node: Node) -> str:
    """Name under which the (post-activation) output of ``node`` was calibrated."""
    return node.attrs.get("act_node", node.name)


def output_producer(graph: ModelGraph) -> Node:
    """The last non-shape node on the path to the graph output."""
    n = graph.node(graph.output)
    while n.op in SHAPE_OPS:
        n = graph.node(n.inputs[0])
    if n.op == "input":
        raise GraphError("graph output is a pure reshuffle of the input", n.name)
    return n
