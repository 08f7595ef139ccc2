"""Minimal reverse-mode layer library on numpy arrays.

Every layer caches what its backward pass needs during ``forward`` and
releases gradients via ``backward``, which returns the gradient w.r.t. the
layer input and accumulates parameter gradients in place (``param.grad``).
Precision is configurable per layer (float32 for training, float64 for
finite-difference checks).  Image tensors are laid out NCHW.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Dimension mismatch, naming the offending layer."""

    def __init__(self, layer: str, expected, got):
        self.layer = layer
        self.expected = expected
        self.got = got
        super().__init__(f"layer {layer!r} expected input {expected}, got {got}")


class StateError(RuntimeError):
    """Backward invoked without a matching forward."""


class Parameter:
    def __init__(self, data: np.ndarray, name: str = "", trainable: bool = True):
        self.data = data
        self.name = name
        self.trainable = trainable
        self.grad = None

    def add_grad(self, g: np.ndarray):
        if not self.trainable:
            return
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def trunc_normal(shape, std, rng, dtype):
    """Normal(0, std) resampled until every entry lies within 2 std."""
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2.0 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2.0 * std
    return x.astype(dtype)


class Layer:
    """Base layer: subclasses fill in _forward/_backward and params()."""

    kind = "layer"

    def __init__(self):
        self.name = self.kind
        self._ctx = None

    def params(self) -> list:
        return []

    def buffers(self) -> list:
        """Non-trainable state persisted in checkpoints, as (name, array)."""
        return []

    def descriptor(self) -> str:
        return self.kind

    def forward(self, x, train: bool):
        raise NotImplementedError

    def backward(self, grad, param_grads: bool = True):
        if self._ctx is None:
            raise StateError(f"backward before forward in layer {self.name!r}")
        return self._backward(grad, param_grads)

    def _backward(self, grad, param_grads):
        raise NotImplementedError


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_dim, out_dim, rng, dtype=np.float32, init_std=0.02, trainable=True,
                 bias=True):
        super().__init__()
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.W = Parameter(trunc_normal((in_dim, out_dim), init_std, rng, dtype), trainable=trainable)
        # a bias feeding straight into batchnorm is cancelled by the mean
        # subtraction, so such layers are built with bias=False
        self.b = Parameter(np.zeros(out_dim, dtype=dtype), trainable=trainable) if bias else None

    def params(self):
        return [self.W] if self.b is None else [self.W, self.b]

    def descriptor(self):
        suffix = "" if self.b is not None else " nobias"
        return f"dense {self.in_dim} {self.out_dim}{suffix}"

    def forward(self, x, train: bool):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(self.name, f"(batch, {self.in_dim})", x.shape)
        self._ctx = x
        y = x @ self.W.data
        return y if self.b is None else y + self.b.data

    def _backward(self, grad, param_grads):
        x = self._ctx
        if param_grads:
            self.W.add_grad(x.T @ grad)
            if self.b is not None:
                self.b.add_grad(grad.sum(axis=0))
        return grad @ self.W.data.T


def _same_pad(n, k, s):
    """TF-style SAME padding for extent n, kernel k, stride s (extra at end)."""
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    beg = total // 2
    return out, beg, total - beg


def _im2col(x, kh, kw, s, oh, ow):
    b, c = x.shape[:2]
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + s * oh : s, j : j + s * ow : s]
    return cols.reshape(b, c * kh * kw, oh * ow)


def _col2im(cols, padded_shape, kh, kw, s, oh, ow):
    b, c, h, w = padded_shape
    out = np.zeros(padded_shape, dtype=cols.dtype)
    cols = cols.reshape(b, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + s * oh : s, j : j + s * ow : s] += cols[:, :, i, j]
    return out


class Conv2D(Layer):
    """Strided convolution with SAME padding (4x4 stride 2 halves extents)."""

    kind = "conv"

    def __init__(self, in_ch, out_ch, kernel, stride, rng, dtype=np.float32, init_std=0.02,
                 bias=True):
        super().__init__()
        self.in_ch, self.out_ch = int(in_ch), int(out_ch)
        self.kernel, self.stride = int(kernel), int(stride)
        self.W = Parameter(trunc_normal((out_ch, in_ch, kernel, kernel), init_std, rng, dtype))
        self.b = Parameter(np.zeros(out_ch, dtype=dtype)) if bias else None

    def params(self):
        return [self.W] if self.b is None else [self.W, self.b]

    def descriptor(self):
        suffix = "" if self.b is not None else " nobias"
        return f"conv {self.in_ch} {self.out_ch} k{self.kernel} s{self.stride}{suffix}"

    def forward(self, x, train: bool):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(self.name, f"(batch, {self.in_ch}, h, w)", x.shape)
        k, s = self.kernel, self.stride
        oh, pt, pb = _same_pad(x.shape[2], k, s)
        ow, pl, pr = _same_pad(x.shape[3], k, s)
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        cols = _im2col(xp, k, k, s, oh, ow)
        w_mat = self.W.data.reshape(self.out_ch, -1)
        y = np.matmul(w_mat, cols).reshape(x.shape[0], self.out_ch, oh, ow)
        if self.b is not None:
            y += self.b.data[:, None, None]
        self._ctx = (cols, xp.shape, x.shape, (oh, ow, pt, pl))
        return y

    def _backward(self, grad, param_grads):
        cols, padded_shape, x_shape, (oh, ow, pt, pl) = self._ctx
        k, s = self.kernel, self.stride
        g_mat = grad.reshape(grad.shape[0], self.out_ch, oh * ow)
        w_mat = self.W.data.reshape(self.out_ch, -1)
        if param_grads:
            self.W.add_grad(
                np.einsum("bfo,bco->fc", g_mat, cols).reshape(self.W.data.shape)
            )
            if self.b is not None:
                self.b.add_grad(grad.sum(axis=(0, 2, 3)))
        dcols = np.matmul(w_mat.T, g_mat)
        dxp = _col2im(dcols, padded_shape, k, k, s, oh, ow)
        return dxp[:, :, pt : pt + x_shape[2], pl : pl + x_shape[3]]


class ConvTranspose2D(Layer):
    """Stride-s up-convolution: output extents are input extents times s.

    Implemented as the adjoint of the matching SAME-padded down-convolution,
    so ConvTranspose2D(c, f) exactly reverses the geometry of Conv2D(f, c).
    """

    kind = "convT"

    def __init__(self, in_ch, out_ch, kernel, stride, rng, dtype=np.float32, init_std=0.02,
                 bias=True):
        super().__init__()
        self.in_ch, self.out_ch = int(in_ch), int(out_ch)
        self.kernel, self.stride = int(kernel), int(stride)
        # weight laid out like the mirrored down-conv: (in_ch, out_ch, k, k)
        self.W = Parameter(trunc_normal((in_ch, out_ch, kernel, kernel), init_std, rng, dtype))
        self.b = Parameter(np.zeros(out_ch, dtype=dtype)) if bias else None

    def params(self):
        return [self.W] if self.b is None else [self.W, self.b]

    def descriptor(self):
        suffix = "" if self.b is not None else " nobias"
        return f"convT {self.in_ch} {self.out_ch} k{self.kernel} s{self.stride}{suffix}"

    def forward(self, x, train: bool):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(self.name, f"(batch, {self.in_ch}, h, w)", x.shape)
        b, _, h, w = x.shape
        k, s = self.kernel, self.stride
        out_h, out_w = h * s, w * s
        _, pt, pb = _same_pad(out_h, k, s)
        _, pl, pr = _same_pad(out_w, k, s)
        padded_shape = (b, self.out_ch, out_h + pt + pb, out_w + pl + pr)
        w_mat = self.W.data.reshape(self.in_ch, -1)  # (C, F*k*k)
        x_mat = x.reshape(b, self.in_ch, h * w)
        yp = _col2im(np.matmul(w_mat.T, x_mat), padded_shape, k, k, s, h, w)
        y = yp[:, :, pt : pt + out_h, pl : pl + out_w]
        if self.b is not None:
            y += self.b.data[:, None, None]
        self._ctx = (x_mat, x.shape, (pt, pb, pl, pr))
        return y

    def _backward(self, grad, param_grads):
        x_mat, x_shape, (pt, pb, pl, pr) = self._ctx
        b, _, h, w = x_shape
        k, s = self.kernel, self.stride
        gp = np.pad(grad, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        gcols = _im2col(gp, k, k, s, h, w)  # (b, F*k*k, h*w)
        w_mat = self.W.data.reshape(self.in_ch, -1)
        if param_grads:
            self.W.add_grad(
                np.einsum("bco,bfo->cf", x_mat, gcols).reshape(self.W.data.shape)
            )
            if self.b is not None:
                self.b.add_grad(grad.sum(axis=(0, 2, 3)))
        dx = np.matmul(w_mat, gcols).reshape(x_shape)
        return dx


class BatchNorm(Layer):
    """Batch normalization over features (2D input) or channels (4D input).

    Train mode normalizes with batch statistics and updates running averages
    (momentum 0.9); eval mode applies the stored running statistics.
    """

    kind = "batchnorm"

    def __init__(self, width, dtype=np.float32, momentum=0.9, eps=1e-5):
        super().__init__()
        self.width = int(width)
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(width, dtype=dtype))
        self.beta = Parameter(np.zeros(width, dtype=dtype))
        self.running_mean = np.zeros(width, dtype=dtype)
        self.running_var = np.ones(width, dtype=dtype)

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def set_buffer(self, name, value):
        setattr(self, name, value)

    def descriptor(self):
        return f"batchnorm {self.width}"

    def _axes_and_shape(self, x):
        if x.ndim == 2:
            return (0,), (1, self.width)
        if x.ndim == 4:
            return (0, 2, 3), (1, self.width, 1, 1)
        raise ShapeError(self.name, "2D or 4D input", x.shape)

    def forward(self, x, train: bool):
        axes, bshape = self._axes_and_shape(x)
        if x.shape[1] != self.width:
            raise ShapeError(self.name, f"width {self.width} on axis 1", x.shape)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean = (m * self.running_mean + (1 - m) * mean).astype(x.dtype)
            self.running_var = (m * self.running_var + (1 - m) * var).astype(x.dtype)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
        self._ctx = (xhat, inv_std, axes, bshape, train)
        return self.gamma.data.reshape(bshape) * xhat + self.beta.data.reshape(bshape)

    def _backward(self, grad, param_grads):
        xhat, inv_std, axes, bshape, train = self._ctx
        if param_grads:
            self.gamma.add_grad((grad * xhat).sum(axis=axes))
            self.beta.add_grad(grad.sum(axis=axes))
        gscaled = grad * self.gamma.data.reshape(bshape)
        if not train:
            return gscaled * inv_std.reshape(bshape)
        m = xhat.size // self.width
        sum_g = gscaled.sum(axis=axes, keepdims=True)
        sum_gx = (gscaled * xhat).sum(axis=axes, keepdims=True)
        return (inv_std.reshape(bshape) / m) * (m * gscaled - sum_g - xhat * sum_gx)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train: bool):
        self._ctx = x > 0
        return np.where(self._ctx, x, x.dtype.type(0))

    def _backward(self, grad, param_grads):
        return np.where(self._ctx, grad, grad.dtype.type(0))


class LeakyReLU(Layer):
    kind = "lrelu"

    def __init__(self, slope=0.2):
        super().__init__()
        self.slope = slope

    def descriptor(self):
        return f"lrelu {self.slope}"

    def forward(self, x, train: bool):
        self._ctx = x > 0
        return np.where(self._ctx, x, x * x.dtype.type(self.slope))

    def _backward(self, grad, param_grads):
        return np.where(self._ctx, grad, grad * grad.dtype.type(self.slope))


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, train: bool):
        # exp only ever sees non-positive arguments, so saturation rounds to
        # 0 or 1 instead of overflowing
        e = np.exp(-np.abs(x))
        y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        self._ctx = y
        return y

    def _backward(self, grad, param_grads):
        y = self._ctx
        return grad * y * (1.0 - y)


class Tanh(Layer):
    kind = "tanh"

    def forward(self, x, train: bool):
        y = np.tanh(x)
        self._ctx = y
        return y

    def _backward(self, grad, param_grads):
        return grad * (1.0 - self._ctx**2)


class Softmax(Layer):
    """Row-wise softmax; ``groups`` splits the last axis into independent
    blocks (one per tree node) each normalized on its own."""

    kind = "softmax"

    def __init__(self, groups=1):
        super().__init__()
        self.groups = int(groups)

    def descriptor(self):
        return f"softmax g{self.groups}"

    def forward(self, x, train: bool):
        if x.ndim != 2 or x.shape[1] % self.groups:
            raise ShapeError(self.name, f"(batch, {self.groups}*k)", x.shape)
        z = x.reshape(x.shape[0], self.groups, -1)
        z = z - z.max(axis=2, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=2, keepdims=True)
        self._ctx = y
        return y.reshape(x.shape)

    def _backward(self, grad, param_grads):
        y = self._ctx
        g = grad.reshape(y.shape)
        dot = (g * y).sum(axis=2, keepdims=True)
        return (y * (g - dot)).reshape(grad.shape)


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, p=0.5, rng=None):
        super().__init__()
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng()

    def descriptor(self):
        return f"dropout {self.p}"

    def reseed(self, seed):
        self.rng = np.random.default_rng(seed)

    def forward(self, x, train: bool):
        if not train or self.p == 0.0:
            self._ctx = (None,)
            return x
        keep = 1.0 - self.p
        mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / x.dtype.type(keep)
        self._ctx = (mask,)
        return x * mask

    def _backward(self, grad, param_grads):
        (mask,) = self._ctx
        return grad if mask is None else grad * mask


class Reshape(Layer):
    """Reshape the per-sample tail; the batch axis stays put."""

    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def descriptor(self):
        return "reshape " + "x".join(map(str, self.shape))

    def forward(self, x, train: bool):
        want = int(np.prod(self.shape))
        if int(np.prod(x.shape[1:])) != want:
            raise ShapeError(self.name, f"(batch, sizes multiplying to {want})", x.shape)
        self._ctx = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def _backward(self, grad, param_grads):
        return grad.reshape(self._ctx)


class Flatten(Reshape):
    kind = "flatten"

    def __init__(self, size):
        super().__init__((size,))

    def descriptor(self):
        return f"flatten {self.shape[0]}"
