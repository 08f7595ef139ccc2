"""Binary checkpoint format.

Layout (all integers little-endian):

    magic "DTLC" | version u32 | tree block | meta JSON | graph sections

    tree block: depth u32, k_1..k_L u32, leaf_kind u8 (0 discrete,
                1 continuous), supervised_root u8
    meta JSON:  length u32 + UTF-8 payload (sorted keys, compact)
    graphs:     count u32, then per graph: name, layer table (descriptor
                strings), tensor table (name, ndim u8, extents u32, payload
                as little-endian float32)

Strings are u16-length-prefixed UTF-8.  Tensor order follows the graph's
state enumeration, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import architectures
from .network import NetworkGraph
from .tree import CONTINUOUS, DISCRETE, TreeSpec

MAGIC = b"DTLC"
VERSION = 1
_LEAF_CODES = {DISCRETE: 0, CONTINUOUS: 1}
_LEAF_NAMES = {v: k for k, v in _LEAF_CODES.items()}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tree: TreeSpec
    meta: dict
    generator: NetworkGraph
    discriminator: NetworkGraph

    @property
    def dim_z(self) -> int:
        return int(self.meta["dim_z"])


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: needed {n} bytes at offset {self.pos}, "
                f"file ends at {len(self.data)}"
            )
        piece = self.data[self.pos : self.pos + n]
        self.pos += n
        return piece

    def u8(self):
        return struct.unpack("<B", self.take(1))[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def string(self):
        return self.take(self.u16()).decode("utf-8")


def _pack_str(s: str) -> bytes:
    data = s.encode("utf-8")
    return struct.pack("<H", len(data)) + data


def _graph_bytes(name: str, graph: NetworkGraph) -> bytes:
    parts = [_pack_str(name)]
    table = graph.layer_table()
    parts.append(struct.pack("<I", len(table)))
    parts += [_pack_str(row) for row in table]
    items = graph.state_items()
    parts.append(struct.pack("<I", len(items)))
    for tensor_name, arr in items:
        parts.append(_pack_str(tensor_name))
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    tree = ckpt.tree
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<I", tree.depth),
        struct.pack(f"<{tree.depth}I", *tree.branching),
        struct.pack("<BB", _LEAF_CODES[tree.leaf_kind], int(tree.supervised_root)),
    ]
    meta_json = json.dumps(ckpt.meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<I", len(meta_json)))
    parts.append(meta_json)
    parts.append(struct.pack("<I", 2))
    parts.append(_graph_bytes("generator", ckpt.generator))
    parts.append(_graph_bytes("discriminator", ckpt.discriminator))
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at offset 0 (expected {MAGIC!r})")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")

    depth = r.u32()
    branching = struct.unpack(f"<{depth}I", r.take(4 * depth))
    leaf_code, supervised = r.u8(), r.u8()
    if leaf_code not in _LEAF_NAMES:
        raise CheckpointError(f"unknown leaf kind code {leaf_code}")
    tree = TreeSpec(
        branching=branching,
        leaf_kind=_LEAF_NAMES[leaf_code],
        supervised_root=bool(supervised),
    )

    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    n_graphs = r.u32()
    if n_graphs != 2:
        raise CheckpointError(f"expected 2 graph sections, found {n_graphs}")

    gen, disc = architectures.build_graphs(
        meta["arch"], tree, int(meta["dim_z"]), np.random.default_rng(0)
    )
    graphs = {"generator": gen, "discriminator": disc}
    for _ in range(2):
        name = r.string()
        if name not in graphs:
            raise CheckpointError(f"unknown graph section {name!r}")
        graph = graphs[name]
        stored_table = [r.string() for _ in range(r.u32())]
        if stored_table != graph.layer_table():
            raise CheckpointError(
                f"layer table mismatch for {name!r}: checkpoint was built with a "
                "different architecture or tree"
            )
        arrays = {}
        for _ in range(r.u32()):
            tensor_name = r.string()
            ndim = r.u8()
            shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            payload = r.take(4 * count)
            arrays[tensor_name] = np.frombuffer(payload, dtype="<f4").reshape(shape)
        graph.load_state(arrays)

    return Checkpoint(tree=tree, meta=meta, generator=gen, discriminator=disc)
