"""Hierarchical code prediction and layer-bounded L2 retrieval.

The posterior heads run in eval mode on (scaled) inputs; deeper layers are
gated by their predicted ancestors exactly like the latent masking, but with
soft probabilities: node n's block at layer l+1 is multiplied by entry n of
the layer-l prediction.  An argmax mode snaps every head to one-hot first,
which reduces the prediction to a valid hard assignment mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint


def _one_hot_rows(probs: np.ndarray) -> np.ndarray:
    """Per-node argmax as one-hot, same shape as the (b, n, k) input."""
    out = np.zeros_like(probs)
    idx = probs.argmax(axis=2)
    b, n, _ = probs.shape
    out[np.arange(b)[:, None], np.arange(n)[None, :], idx] = 1.0
    return out


def predict_codes(ckpt: Checkpoint, images, depth: int | None = None, hard: bool = False) -> list:
    """Per-layer predicted code vectors for a batch of raw inputs.

    Returns one (batch, N_l * k_l) float64 array per layer 1..depth.  A
    single unbatched input comes back unbatched.  Inputs are raw dataset
    values; the stored input scale is applied before the trunk.
    """
    tree = ckpt.tree
    depth = tree.depth if depth is None else int(depth)
    if not 1 <= depth <= tree.depth:
        raise ValueError(f"depth must be in 1..{tree.depth}, got {depth}")
    x = np.asarray(images, dtype=np.float64)
    expected_ndim = 2 if ckpt.meta.get("arch") == "sim_mlp" else 4
    single = x.ndim == expected_ndim - 1
    if single:
        x = x[None]
    x = x * float(ckpt.meta.get("input_scale", 1.0))

    heads = [f"q{l}" for l in range(1, depth + 1)]
    # encode one row at a time: an item's code must not depend on its batch
    # neighbors, and BLAS matmul reduction order changes with batch extent
    rows = [
        ckpt.discriminator.forward(x[i : i + 1], train=False, heads=heads)
        for i in range(x.shape[0])
    ]
    out = {h: np.concatenate([r[h] for r in rows], axis=0) for h in heads}

    masked = []
    gates = np.ones((x.shape[0], 1), dtype=np.float64)
    for layer in range(1, depth + 1):
        n, k = tree.nodes_at(layer), tree.branching[layer - 1]
        probs = np.asarray(out[f"q{layer}"], dtype=np.float64).reshape(-1, n, k)
        if tree.layer_is_discrete(layer):
            # the heads' 32-bit softmax rows can miss unit mass by ~3e-8;
            # renormalize so every gated code is an exact distribution
            probs = probs / probs.sum(axis=2, keepdims=True)
            if hard:
                probs = _one_hot_rows(probs)
        gated = probs * gates[:, :, None]
        masked.append(gated.reshape(-1, n * k))
        gates = masked[-1]
    if single:
        return [m[0] for m in masked]
    return masked


@dataclass
class CodeIndex:
    """Immutable retrieval database: item ids plus per-layer gated codes."""

    ids: np.ndarray
    layers: list  # one (n_items, N_l * k_l) array per tree layer

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.layers = [np.asarray(a, dtype=np.float64) for a in self.layers]
        if any(len(a) != len(self.ids) for a in self.layers):
            raise ValueError("every code layer must have one row per item id")

    def __len__(self):
        return len(self.ids)

    @property
    def depth(self) -> int:
        return len(self.layers)

    def vectors(self, depth: int) -> np.ndarray:
        if not 1 <= depth <= self.depth:
            raise ValueError(f"depth must be in 1..{self.depth}, got {depth}")
        return np.concatenate(self.layers[:depth], axis=1)


def build_index(ckpt: Checkpoint, images, ids=None, hard: bool = False) -> CodeIndex:
    codes = predict_codes(ckpt, images, hard=hard)
    n = len(codes[0])
    ids = np.arange(n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    return CodeIndex(ids=ids, layers=codes)


def retrieve(query_codes: list, index: CodeIndex, depth: int, top_n: int = 5) -> list:
    """Nearest items under L2 over code layers 1..depth.

    Returns [(rank, item id, distance)] ascending by distance, ties broken
    by ascending item id.
    """
    if len(index) == 0:
        raise ValueError("empty index")
    query = np.concatenate([np.asarray(c, dtype=np.float64).reshape(-1) for c in query_codes[:depth]])
    base = index.vectors(depth)
    if base.shape[1] != query.shape[0]:
        raise ValueError(f"query width {query.shape[0]} does not match index width {base.shape[1]}")
    distances = np.linalg.norm(base - query[None, :], axis=1)
    order = np.lexsort((index.ids, distances))[: int(top_n)]
    return [(rank + 1, int(index.ids[i]), float(distances[i])) for rank, i in enumerate(order)]


# -- CSV persistence ----------------------------------------------------------


def save_index_csv(path, index: CodeIndex):
    cols = ["id"]
    for l, arr in enumerate(index.layers, start=1):
        cols += [f"c{l}_{j}" for j in range(arr.shape[1])]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in range(len(index)):
            vals = [str(int(index.ids[row]))]
            for arr in index.layers:
                # 17 significant digits round-trips float64 exactly
                vals += [f"{v:.17g}" for v in arr[row]]
            fh.write(",".join(vals) + "\n")


def load_index_csv(path) -> CodeIndex:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "id":
            raise ValueError(f"unexpected index header in {path}")
        widths: dict[int, int] = {}
        for name in header[1:]:
            layer = int(name.split("_")[0][1:])
            widths[layer] = widths.get(layer, 0) + 1
        ids, rows = [], []
        for line in fh:
            parts = line.strip().split(",")
            ids.append(int(parts[0]))
            rows.append([float(v) for v in parts[1:]])
    data = np.array(rows, dtype=np.float64).reshape(len(ids), -1)
    layers = []
    at = 0
    for layer in sorted(widths):
        layers.append(data[:, at : at + widths[layer]])
        at += widths[layer]
    return CodeIndex(ids=np.array(ids, dtype=np.int64), layers=layers)


RESULTS_HEADER = "rank,id,distance"


def save_results_csv(path, results: list):
    with open(path, "w") as fh:
        fh.write(RESULTS_HEADER + "\n")
        for rank, item, dist in results:
            fh.write(f"{rank},{item},{dist:.12g}\n")
