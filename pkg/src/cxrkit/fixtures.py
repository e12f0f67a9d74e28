"""Deterministic fixture weights for tests and demos.

Weights come from one shared SplitMix64 stream (Box-Muller normals), filled
in graph declaration order, so an (architecture, seed) pair always produces
byte-identical CXRW files.  Conv and linear weights are He-scaled Gaussians;
biases start at zero; norm layers start at identity with zeroed running
statistics.
"""

import math

import numpy as np

from .models import BUILDERS
from .nn import ModelGraph, WeightStore, infer_shapes, save_weights
from .rng import RngState, normal_block


def _gaussian(rng: RngState, shape, scale: float) -> np.ndarray:
    return (normal_block(rng, int(np.prod(shape))) * scale).reshape(shape).astype(np.float32)


def random_weight_store(g: ModelGraph, seed: int, architecture: str = "") -> WeightStore:
    """Weight store with deterministic pseudo-random values for every ref."""
    rng = RngState(seed)
    shapes = infer_shapes(g)
    tensors = {}
    for node in g.nodes:
        a = node.attrs
        in_c = shapes[node.inputs[0]][0] if node.inputs else 0
        if node.op == "conv2d":
            kh, kw = a["kernel"]
            per_group = in_c // a["groups"]
            fan_in = per_group * kh * kw
            tensors[node.weights[0]] = _gaussian(
                rng, (a["out_channels"], per_group, kh, kw), math.sqrt(2.0 / fan_in))
            if len(node.weights) > 1:
                tensors[node.weights[1]] = np.zeros(a["out_channels"], dtype=np.float32)
        elif node.op == "batchnorm":
            tensors[node.weights[0]] = np.ones(in_c, dtype=np.float32)
            tensors[node.weights[1]] = np.zeros(in_c, dtype=np.float32)
            tensors[node.weights[2]] = np.zeros(in_c, dtype=np.float32)
            tensors[node.weights[3]] = np.ones(in_c, dtype=np.float32)
        elif node.op == "layernorm":
            tensors[node.weights[0]] = np.ones(in_c, dtype=np.float32)
            tensors[node.weights[1]] = np.zeros(in_c, dtype=np.float32)
        elif node.op == "linear":
            tensors[node.weights[0]] = _gaussian(
                rng, (a["out_features"], a["in_features"]), math.sqrt(2.0 / a["in_features"]))
            tensors[node.weights[1]] = np.zeros(a["out_features"], dtype=np.float32)
    return WeightStore(tensors=tensors, architecture=architecture, class_labels=list(g.class_labels))


def write_fixture(architecture: str, seed: int, path, num_classes: int = 4) -> WeightStore:
    """Build the named architecture and write a seeded random CXRW file."""
    if architecture not in BUILDERS:
        raise ValueError(f"unknown architecture {architecture!r}")
    g = BUILDERS[architecture](num_classes)
    store = random_weight_store(g, seed, architecture=architecture)
    save_weights(store, path)
    return store
