"""Decision-tree latent codes: hierarchical sampling, masking, average fill.

The latent controller is an L-layer tree.  Layer ``l`` holds ``N_l`` nodes
(``N_1 = 1``, ``N_{l+1} = N_l * k_l``) and every node carries a code vector of
length ``k_l``: a one-hot category for discrete layers, entries in [-1, 1] for
a continuous leaf layer.  A parent's selecting entry gates the child node
under it, so after masking exactly one root-to-leaf chain of nodes survives.
The generator consumes the flattened masked leaf layer.

Children are flattened node-major, child-minor: child ``i`` of node ``n``
(both 1-based) becomes node ``k_l * (n - 1) + i`` of layer ``l + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

DISCRETE = "discrete"
CONTINUOUS = "continuous"
LEAF_KINDS = (DISCRETE, CONTINUOUS)


@dataclass(frozen=True)
class TreeSpec:
    """Shape of the latent tree: branching factors plus leaf behaviour.

    ``branching[l-1]`` is ``k_l``, the code width of every node at layer
    ``l``.  Interior layers are always discrete; ``leaf_kind`` selects the
    behaviour of the deepest layer only.  ``supervised_root`` marks trees
    whose root code comes from data labels.
    """

    branching: tuple[int, ...]
    leaf_kind: str = DISCRETE
    supervised_root: bool = False

    def __post_init__(self):
        object.__setattr__(self, "branching", tuple(int(k) for k in self.branching))
        if len(self.branching) < 1:
            raise ValueError("tree needs at least one layer")
        if any(k < 1 for k in self.branching):
            raise ValueError(f"branching factors must be >= 1, got {self.branching}")
        if self.leaf_kind not in LEAF_KINDS:
            raise ValueError(f"leaf_kind must be one of {LEAF_KINDS}, got {self.leaf_kind!r}")

    @property
    def depth(self) -> int:
        return len(self.branching)

    def nodes_at(self, layer: int) -> int:
        """Number of nodes N_l at 1-based ``layer``."""
        self._check_layer(layer)
        n = 1
        for k in self.branching[: layer - 1]:
            n *= k
        return n

    @property
    def leaf_dim(self) -> int:
        """Length of the flattened leaf vector, prod(k_1..k_L)."""
        return self.nodes_at(self.depth) * self.branching[-1]

    def layer_is_discrete(self, layer: int) -> bool:
        self._check_layer(layer)
        return layer < self.depth or self.leaf_kind == DISCRETE

    def _check_layer(self, layer: int):
        if not 1 <= layer <= self.depth:
            raise ValueError(f"layer {layer} outside 1..{self.depth}")


class ActivePath(NamedTuple):
    """Root-to-leaf selection chain; ``complete`` is False when the walk hit
    a non-one-hot (curriculum-filled) layer and stopped early."""

    steps: list  # [(layer, node, selected_index)] all 1-based
    complete: bool


@dataclass
class CodeAssignment:
    """A batch of latent-code draws for one TreeSpec.

    ``raw[l-1]`` has shape (batch, N_l, k_l) and holds the codes as sampled;
    ``masked`` holds the same shapes after parent gating and is None until
    :func:`apply_mask` runs.  ``flattened_leaf`` is (batch, prod k).
    """

    spec: TreeSpec
    raw: list
    masked: list | None = None
    flattened_leaf: np.ndarray | None = None

    @property
    def batch_size(self) -> int:
        return self.raw[0].shape[0]


def sample_raw(spec: TreeSpec, n: int = 1, rng=None, fixed_root=None) -> CodeAssignment:
    """Draw ``n`` raw code assignments: uniform one-hot per discrete node,
    Unif(-1, 1) entries for a continuous leaf layer.

    ``fixed_root`` (one-hot of length k_1, or a (n, k_1) batch) pins the root
    code and is only legal on supervised_root specs.
    """
    if rng is None:
        rng = np.random.default_rng()
    if fixed_root is not None and not spec.supervised_root:
        raise ValueError("fixed_root given but spec.supervised_root is False")

    raw = []
    for layer in range(1, spec.depth + 1):
        n_nodes = spec.nodes_at(layer)
        k = spec.branching[layer - 1]
        if spec.layer_is_discrete(layer):
            idx = rng.integers(0, k, size=(n, n_nodes))
            codes = np.zeros((n, n_nodes, k))
            np.put_along_axis(codes, idx[:, :, None], 1.0, axis=2)
        else:
            codes = rng.uniform(-1.0, 1.0, size=(n, n_nodes, k))
        raw.append(codes)

    if fixed_root is not None:
        root = np.asarray(fixed_root, dtype=float)
        if root.ndim == 1:
            root = np.broadcast_to(root, (n, root.shape[0])).copy()
        if root.shape != (n, spec.branching[0]):
            raise ValueError(
                f"fixed_root shape {root.shape} incompatible with batch {n}, k_1={spec.branching[0]}"
            )
        if not _is_one_hot(root):
            raise ValueError("fixed_root rows must be exact one-hot vectors")
        raw[0] = root[:, None, :]

    return CodeAssignment(spec=spec, raw=raw)


def apply_mask(assignment: CodeAssignment) -> CodeAssignment:
    """Gate every child code by its parent's selecting entry (top down).

    Layer 1 passes through unchanged; each deeper node is multiplied by the
    masked parent entry it hangs from, so off-path subtrees zero out.
    Returns a new CodeAssignment with ``masked`` and ``flattened_leaf`` set.
    """
    spec = assignment.spec
    masked = [assignment.raw[0].copy()]
    for layer in range(2, spec.depth + 1):
        b = assignment.batch_size
        gates = masked[-1].reshape(b, spec.nodes_at(layer))
        masked.append(assignment.raw[layer - 1] * gates[:, :, None])
    leaf = masked[-1].reshape(assignment.batch_size, spec.leaf_dim)
    return CodeAssignment(
        spec=spec,
        raw=[c.copy() for c in assignment.raw],
        masked=masked,
        flattened_leaf=leaf,
    )


def curriculum_fill(spec: TreeSpec, assignment: CodeAssignment, active_layer: int) -> CodeAssignment:
    """Replace codes deeper than ``active_layer`` with their average value
    (1/k_l for discrete layers, 0 for continuous) and re-apply the mask.

    Layers up to and including ``active_layer`` keep their sampled codes.
    """
    if not 1 <= active_layer <= spec.depth:
        raise ValueError(f"active_layer {active_layer} outside 1..{spec.depth}")
    raw = []
    for layer in range(1, spec.depth + 1):
        codes = assignment.raw[layer - 1]
        if layer <= active_layer:
            raw.append(codes.copy())
        elif spec.layer_is_discrete(layer):
            raw.append(np.full_like(codes, 1.0 / spec.branching[layer - 1]))
        else:
            raw.append(np.zeros_like(codes))
    return apply_mask(CodeAssignment(spec=spec, raw=raw))


def active_path(assignment: CodeAssignment, sample: int = 0) -> ActivePath:
    """Walk the selected chain of one sample, returning 1-based
    (layer, node, selected_index) steps.

    The walk covers every discrete layer; a continuous leaf layer carries no
    selection and is skipped.  Hitting a curriculum-filled (non-one-hot)
    layer truncates the chain and clears ``complete``.
    """
    spec = assignment.spec
    steps = []
    node = 1
    for layer in range(1, spec.depth + 1):
        if not spec.layer_is_discrete(layer):
            break
        vec = assignment.raw[layer - 1][sample, node - 1]
        if not _is_one_hot(vec[None, :]):
            return ActivePath(steps, complete=False)
        sel = int(np.argmax(vec)) + 1
        steps.append((layer, node, sel))
        node = spec.branching[layer - 1] * (node - 1) + sel
    return ActivePath(steps, complete=True)


def active_nodes(assignment: CodeAssignment, layer: int) -> np.ndarray:
    """Vectorized 0-based index of each sample's active node at ``layer``.

    Requires exact one-hot raw codes on layers above ``layer``; the active
    node is determined by those ancestor selections alone.
    """
    spec = assignment.spec
    spec._check_layer(layer)
    b = assignment.batch_size
    nodes = np.zeros(b, dtype=np.int64)
    for l in range(1, layer):
        codes = assignment.raw[l - 1]
        sel = np.argmax(codes[np.arange(b), nodes], axis=1)
        picked = codes[np.arange(b), nodes, sel]
        sums = codes[np.arange(b), nodes].sum(axis=1)
        if not (np.all(picked == 1.0) and np.all(sums == 1.0)):
            raise ValueError(f"layer {l} is not exactly one-hot; cannot resolve active nodes")
        nodes = nodes * spec.branching[l - 1] + sel
    return nodes


def _is_one_hot(rows: np.ndarray) -> bool:
    binary = np.isin(rows, (0.0, 1.0)).all()
    return bool(binary and np.all(rows.sum(axis=-1) == 1.0))
