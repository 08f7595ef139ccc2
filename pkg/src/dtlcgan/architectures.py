"""Network builders: the 2D-simulation MLPs and the MNIST conv nets.

Both discriminators expose one sigmoid head ("d") plus a shared hidden
branch ("qh") feeding one posterior head per tree layer ("q1".."qL").  A
layer-l posterior head emits all of that layer's node outputs at once as a
(batch, N_l * k_l) array: block n is node n's categorical distribution
(grouped softmax) or Gaussian mean (continuous leaf).
"""

from __future__ import annotations

import numpy as np

from .layers import (
    BatchNorm,
    Conv2D,
    ConvTranspose2D,
    Dense,
    Flatten,
    LeakyReLU,
    ReLU,
    Reshape,
    Sigmoid,
    Softmax,
)
from .network import Head, NetworkGraph
from .tree import TreeSpec

ARCHITECTURES = ("sim_mlp", "mnist_conv")


def _posterior_heads(tree: TreeSpec, hidden_dim, rng, dtype, init_std=0.02):
    heads = {}
    for layer in range(1, tree.depth + 1):
        n_nodes = tree.nodes_at(layer)
        k = tree.branching[layer - 1]
        stack = [Dense(hidden_dim, n_nodes * k, rng, dtype=dtype, init_std=init_std)]
        if tree.layer_is_discrete(layer):
            stack.append(Softmax(groups=n_nodes))
        heads[f"q{layer}"] = Head(stack, parent="qh")
    return heads


def _fanin_dense(in_dim, out_dim, rng, dtype):
    # the constant-0.02 convention assumes conv-sized fan-ins; on this tiny
    # MLP it leaves the 2-unit input layer nearly dead and the 2D run stuck
    # in a misaligned partition, so scale by fan-in instead
    return Dense(in_dim, out_dim, rng, dtype=dtype, init_std=1.0 / np.sqrt(in_dim))


def build_sim_mlp(tree: TreeSpec, dim_z, rng, dtype=np.float32):
    gen = NetworkGraph(
        [
            _fanin_dense(dim_z + tree.leaf_dim, 128, rng, dtype),
            ReLU(),
            _fanin_dense(128, 128, rng, dtype),
            ReLU(),
            _fanin_dense(128, 2, rng, dtype),
        ],
        name="generator",
        dtype=dtype,
    )
    heads = {
        "d": Head([_fanin_dense(128, 1, rng, dtype), Sigmoid()]),
        "qh": Head([_fanin_dense(128, 128, rng, dtype), ReLU()]),
    }
    heads.update(_posterior_heads(tree, 128, rng, dtype, init_std=1.0 / np.sqrt(128)))
    disc = NetworkGraph(
        [
            _fanin_dense(2, 128, rng, dtype),
            ReLU(),
            _fanin_dense(128, 128, rng, dtype),
            ReLU(),
        ],
        heads,
        name="discriminator",
        dtype=dtype,
    )
    return gen, disc


def build_mnist_conv(tree: TreeSpec, dim_z, rng, dtype=np.float32):
    gen = NetworkGraph(
        [
            Dense(dim_z + tree.leaf_dim, 1024, rng, dtype=dtype, bias=False),
            BatchNorm(1024, dtype=dtype),
            ReLU(),
            Dense(1024, 7 * 7 * 128, rng, dtype=dtype, bias=False),
            BatchNorm(7 * 7 * 128, dtype=dtype),
            ReLU(),
            Reshape((128, 7, 7)),
            ConvTranspose2D(128, 64, 4, 2, rng, dtype=dtype, bias=False),
            BatchNorm(64, dtype=dtype),
            ReLU(),
            ConvTranspose2D(64, 1, 4, 2, rng, dtype=dtype),
            Sigmoid(),
        ],
        name="generator",
        dtype=dtype,
    )
    heads = {
        "d": Head([Dense(1024, 1, rng, dtype=dtype), Sigmoid()]),
        "qh": Head(
            [
                Dense(1024, 128, rng, dtype=dtype, bias=False),
                BatchNorm(128, dtype=dtype),
                LeakyReLU(0.2),
            ]
        ),
    }
    heads.update(_posterior_heads(tree, 128, rng, dtype))
    disc = NetworkGraph(
        [
            Conv2D(1, 64, 4, 2, rng, dtype=dtype),
            LeakyReLU(0.2),
            Conv2D(64, 128, 4, 2, rng, dtype=dtype, bias=False),
            BatchNorm(128, dtype=dtype),
            LeakyReLU(0.2),
            Flatten(128 * 7 * 7),
            Dense(128 * 7 * 7, 1024, rng, dtype=dtype, bias=False),
            BatchNorm(1024, dtype=dtype),
            LeakyReLU(0.2),
        ],
        heads,
        name="discriminator",
        dtype=dtype,
    )
    return gen, disc


def build_graphs(arch: str, tree: TreeSpec, dim_z: int, rng, dtype=np.float32):
    """Build (generator, discriminator) for an architecture selector."""
    if arch == "sim_mlp":
        return build_sim_mlp(tree, dim_z, rng, dtype=dtype)
    if arch == "mnist_conv":
        return build_mnist_conv(tree, dim_z, rng, dtype=dtype)
    raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")


def data_shape(arch: str) -> tuple:
    """Per-sample shape of the discriminator input for an architecture."""
    return (2,) if arch == "sim_mlp" else (1, 28, 28)
