"""Adam optimizer over Parameter objects."""

from __future__ import annotations

import numpy as np


class Adam:
    """Standard Adam with bias correction.

    Keeps per-parameter moment tensors and step counters; parameters whose
    gradient slot is empty (never touched since the last zero_grad) are
    skipped entirely, so gated heads stay bit-identical to initialization.
    """

    def __init__(self, params, lr, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = [0] * len(self.params)

    def step(self):
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None or not p.trainable:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {p.name!r}")
            self._t[i] += 1
            t = self._t[i]
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * g * g
            m_hat = self._m[i] / (1.0 - self.beta1**t)
            v_hat = self._v[i] / (1.0 - self.beta2**t)
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
