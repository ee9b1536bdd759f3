"""qsrkit: 8-bit x3 image super-resolution models, training, quantization and evaluation in NumPy."""

from .graph import GraphError, ModelGraph, Node, forward
from .tensor import ConvSpec, DimensionError, conv2d, depth_to_space, space_to_depth

__version__ = "0.1.0"

__all__ = ["ConvSpec", "DimensionError", "GraphError", "ModelGraph", "Node", "conv2d", "depth_to_space",
           "forward", "space_to_depth"]
