"""Network graphs: an ordered trunk of layers plus named output heads.

The discriminator and every posterior head share one trunk; each head is its
own short stack of layers hanging off the trunk output (or off another named
head, which is how the posterior branches share their hidden layer).  Forward
computes any subset of heads; backward takes per-head output gradients,
accumulates parameter gradients, and returns the gradient at the graph input
so an upstream network can keep propagating.
"""

from __future__ import annotations

import numpy as np

from .layers import Dropout, StateError


class Head:
    def __init__(self, layers: list, parent: str = "trunk"):
        self.layers = list(layers)
        self.parent = parent


class NetworkGraph:
    def __init__(self, trunk: list, heads: dict | None = None, name: str = "net", dtype=np.float32):
        self.name = name
        self.dtype = np.dtype(dtype)
        self.trunk = list(trunk)
        self.heads: dict[str, Head] = {}
        for head_name, head in (heads or {}).items():
            if not isinstance(head, Head):
                head = Head(head)
            if head.parent != "trunk" and head.parent not in self.heads:
                raise ValueError(
                    f"head {head_name!r} parent {head.parent!r} must be 'trunk' or an earlier head"
                )
            self.heads[head_name] = head
        self._name_layers()
        self._forwarded: list[str] = []

    def _name_layers(self):
        for i, layer in enumerate(self.trunk):
            layer.name = f"{self.name}.trunk.{i}.{layer.kind}"
            self._name_params(layer)
        for head_name, head in self.heads.items():
            for i, layer in enumerate(head.layers):
                layer.name = f"{self.name}.{head_name}.{i}.{layer.kind}"
                self._name_params(layer)

    @staticmethod
    def _name_params(layer):
        for attr in ("W", "b", "gamma", "beta"):
            p = getattr(layer, attr, None)
            if p is not None and hasattr(p, "data"):
                p.name = f"{layer.name}.{attr}"

    # -- forward / backward -------------------------------------------------

    def forward(self, x, train: bool, heads=None) -> dict:
        """Run the trunk, then the requested heads (all by default).

        Returns a dict of head outputs; a graph without heads exposes the
        trunk output under the name "out".
        """
        x = np.asarray(x, dtype=self.dtype)
        for layer in self.trunk:
            x = layer.forward(x, train)
        if not self.heads:
            self._forwarded = []
            self._trunk_out = x
            return {"out": x}

        wanted = list(self.heads) if heads is None else list(heads)
        for h in wanted:
            if h not in self.heads:
                raise KeyError(f"unknown head {h!r} in graph {self.name!r}")
        # pull in parents of requested heads, preserving declaration order
        needed = set()
        for h in wanted:
            while h != "trunk":
                needed.add(h)
                h = self.heads[h].parent
        order = [h for h in self.heads if h in needed]

        outputs = {"trunk": x}
        for h in order:
            head = self.heads[h]
            y = outputs[head.parent]
            for layer in head.layers:
                y = layer.forward(y, train)
            outputs[h] = y
        self._forwarded = order
        self._trunk_out = x
        return {h: outputs[h] for h in order}

    def backward(self, head_grads, param_grads: bool = True):
        """Backpropagate per-head output gradients down to the graph input.

        ``head_grads`` maps head names (or "out" for a headless graph) to
        arrays shaped like the respective forward outputs.  Multiple backward
        calls after one forward are allowed and accumulate parameter
        gradients; pass ``param_grads=False`` to propagate data gradients
        only (used when another player owns this graph's parameters).
        """
        if not hasattr(self, "_trunk_out"):
            raise StateError(f"backward before forward in graph {self.name!r}")
        if not self.heads:
            grad = head_grads["out"] if isinstance(head_grads, dict) else head_grads
            return self._backward_stack(self.trunk, np.asarray(grad, dtype=self.dtype), param_grads)

        pending: dict[str, np.ndarray] = {}
        for name, grad in head_grads.items():
            if name not in self._forwarded:
                raise StateError(f"head {name!r} was not part of the last forward pass")
            pending[name] = np.asarray(grad, dtype=self.dtype)

        trunk_grad = None
        for name in reversed(self._forwarded):
            if name not in pending:
                continue
            g = self._backward_stack(self.heads[name].layers, pending.pop(name), param_grads)
            parent = self.heads[name].parent
            if parent == "trunk":
                trunk_grad = g if trunk_grad is None else trunk_grad + g
            elif parent in pending:
                pending[parent] = pending[parent] + g
            else:
                pending[parent] = g
        if trunk_grad is None:
            trunk_grad = np.zeros_like(self._trunk_out)
        return self._backward_stack(self.trunk, trunk_grad, param_grads)

    @staticmethod
    def _backward_stack(layers, grad, param_grads):
        for layer in reversed(layers):
            grad = layer.backward(grad, param_grads)
        return grad

    # -- parameter plumbing -------------------------------------------------

    def _all_layers(self):
        yield from ((None, l) for l in self.trunk)
        for head_name, head in self.heads.items():
            yield from ((head_name, l) for l in head.layers)

    def parameters(self) -> list:
        return [p for _, layer in self._all_layers() for p in layer.params()]

    def head_parameters(self, head_name: str) -> list:
        return [p for layer in self.heads[head_name].layers for p in layer.params()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def reseed_dropout(self, seed):
        for i, (_, layer) in enumerate(self._all_layers()):
            if isinstance(layer, Dropout):
                layer.reseed([seed, i])

    # -- persistence --------------------------------------------------------

    def layer_table(self) -> list:
        """One descriptor string per layer, trunk first, then heads in order
        (head entries are prefixed with `head_name/parent:`)."""
        rows = [f"trunk: {layer.descriptor()}" for layer in self.trunk]
        for head_name, head in self.heads.items():
            rows += [f"{head_name}/{head.parent}: {layer.descriptor()}" for layer in head.layers]
        return rows

    def state_items(self) -> list:
        """Ordered (name, array) pairs of all parameters and buffers."""
        items = []
        for _, layer in self._all_layers():
            for p in layer.params():
                items.append((p.name, p.data))
            for buf_name, buf in layer.buffers():
                items.append((f"{layer.name}.{buf_name}", buf))
        return items

    def load_state(self, named_arrays: dict):
        """Assign parameters and buffers by qualified name (shape-checked)."""
        for _, layer in self._all_layers():
            for p in layer.params():
                arr = named_arrays[p.name]
                if arr.shape != p.data.shape:
                    raise ValueError(f"{p.name}: stored shape {arr.shape} != {p.data.shape}")
                p.data = arr.astype(self.dtype)
            for buf_name, _ in layer.buffers():
                full = f"{layer.name}.{buf_name}"
                layer.set_buffer(buf_name, named_arrays[full].astype(self.dtype))
