"""Reverse-mode automatic differentiation over float64 numpy arrays.

This is a deliberately small engine: it implements exactly the operators the
policy networks need (dense/conv/pool layers, attention arithmetic, the PPO
surrogate) and nothing else. Gradients are exact reverse-mode derivatives,
checked against central finite differences in the test suite.

Every tensor holds a float64 ndarray. Results of ops on tensors that require
gradients carry a closure that routes the upstream gradient to the parents;
``Tensor.backward`` runs the closures in reverse topological order.
"""

from __future__ import annotations

import numpy as np

# Per-op finiteness checks. Cheap relative to the matmuls but off by default;
# the test suite and the trainer's debug paths switch it on.
CHECK_FINITE = False

_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction inside its body."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (reverses numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_conv_cols")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None
        self._conv_cols = None  # cached im2col patch matrix, see conv2d

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- autograd core ------------------------------------------------------

    def backward(self):
        """Backpropagate from a scalar loss through the recorded graph."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, vjp):
    """Wrap an op result, recording the graph only when it can matter."""
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced by a tensor op")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


# -- arithmetic --------------------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def vjp(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), vjp)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def vjp(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), vjp)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def vjp(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), vjp)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def vjp(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _make(out_data, (a, b), vjp)


def bmm(a, b):
    """Batched matmul: (B, M, K) @ (B, K, N) -> (B, M, N)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 3 or b.data.ndim != 3 or a.data.shape[2] != b.data.shape[1]:
        raise ValueError(f"bmm shape mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def vjp(g):
        if a.requires_grad:
            a._accum(g @ b.data.transpose(0, 2, 1))
        if b.requires_grad:
            b._accum(a.data.transpose(0, 2, 1) @ g)

    return _make(out_data, (a, b), vjp)


# -- elementwise nonlinearities ----------------------------------------------


def tanh(x):
    x = _as_tensor(x)
    out_data = np.tanh(x.data)

    def vjp(g):
        x._accum(g * (1.0 - out_data * out_data))

    return _make(out_data, (x,), vjp)


def exp(x):
    x = _as_tensor(x)
    out_data = np.exp(x.data)

    def vjp(g):
        x._accum(g * out_data)

    return _make(out_data, (x,), vjp)


def square(x):
    x = _as_tensor(x)

    def vjp(g):
        x._accum(g * (2.0 * x.data))

    return _make(x.data * x.data, (x,), vjp)


def clip(x, lo, hi):
    """Clamp to [lo, hi]; gradient passes only through the interior."""
    x = _as_tensor(x)
    out_data = np.clip(x.data, lo, hi)
    pass_mask = (x.data > lo) & (x.data < hi)

    def vjp(g):
        x._accum(g * pass_mask)

    return _make(out_data, (x,), vjp)


def minimum(a, b):
    """Elementwise min; ties split the gradient evenly."""
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = np.minimum(a.data, b.data)
    a_wins = a.data < b.data
    tie = a.data == b.data

    def vjp(g):
        if a.requires_grad:
            a._accum(g * (a_wins + 0.5 * tie))
        if b.requires_grad:
            b._accum(g * (~a_wins & ~tie) + g * (0.5 * tie))

    return _make(out_data, (a, b), vjp)


def maximum(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = np.maximum(a.data, b.data)
    a_wins = a.data > b.data
    tie = a.data == b.data

    def vjp(g):
        if a.requires_grad:
            a._accum(g * (a_wins + 0.5 * tie))
        if b.requires_grad:
            b._accum(g * (~a_wins & ~tie) + g * (0.5 * tie))

    return _make(out_data, (a, b), vjp)


# -- reductions and shape ops -------------------------------------------------


def tsum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            x._accum(np.broadcast_to(g, x.data.shape))
        else:
            if not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                axes = tuple(a % x.data.ndim for a in axes)
                shape = tuple(1 if i in axes else n for i, n in enumerate(x.data.shape))
                g = g.reshape(shape)
            x._accum(np.broadcast_to(g, x.data.shape))

    return _make(out_data, (x,), vjp)


def tmean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for a in axes:
            n *= x.data.shape[a % x.data.ndim]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape):
    x = _as_tensor(x)
    in_shape = x.data.shape

    def vjp(g):
        x._accum(g.reshape(in_shape))

    return _make(x.data.reshape(shape), (x,), vjp)


def transpose(x, axes):
    x = _as_tensor(x)
    inv = tuple(np.argsort(axes))

    def vjp(g):
        x._accum(g.transpose(inv))

    return _make(x.data.transpose(axes), (x,), vjp)


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accum(piece)

    return _make(out_data, tuple(tensors), vjp)


def getitem(x, idx):
    x = _as_tensor(x)
    out_data = x.data[idx]

    def vjp(g):
        buf = np.zeros_like(x.data)
        np.add.at(buf, idx, g)
        x._accum(buf)

    return _make(out_data, (x,), vjp)


# -- neural-net primitives -----------------------------------------------------


def softmax(x, axis=-1):
    """Numerically stable softmax; rows along ``axis`` sum to 1."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)
    if __debug__:
        sums = out_data.sum(axis=axis)
        assert np.all(np.abs(sums - 1.0) < 1e-12), "softmax rows must sum to 1"

    def vjp(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        x._accum(out_data * (g - inner))

    return _make(out_data, (x,), vjp)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def vjp(g):
        if gain.requires_grad:
            gain._accum((g * xhat).sum(axis=tuple(range(g.ndim - 1))))
        if bias.requires_grad:
            bias._accum(g.sum(axis=tuple(range(g.ndim - 1))))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x._accum(inv * (gx - m1 - xhat * m2))

    return _make(out_data, (x, gain, bias), vjp)


def embedding(table, ids):
    """Row lookup into ``table`` (V, D) with an integer index array."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.min(initial=0) < 0 or (ids.size and ids.max() >= table.data.shape[0]):
        raise ValueError(f"embedding ids out of range for table {table.data.shape}")
    out_data = table.data[ids]

    def vjp(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        table._accum(buf)

    return _make(out_data, (table,), vjp)


def _im2col(x):
    """Patch matrix (N*H*W, C*9) for a 3x3 / stride 1 / pad 1 convolution."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    s = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (n, c, h, w, 3, 3), (s[0], s[1], s[2], s[3], s[2], s[3])
    )
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def precompute_conv_cols(x: Tensor):
    """Cache ``x``'s patch matrix so repeated conv2d calls skip the im2col.

    Intended for constant inputs that are convolved once per optimization
    epoch (the image batch of a multi-epoch update): the cache is both the
    forward operand and the weight-gradient operand.
    """
    if x._conv_cols is None:
        x._conv_cols = _im2col(x.data)
    return x


def conv2d(x, w):
    """2-d convolution, kernel 3x3, stride 1, padding 1 (shape-preserving).

    ``x`` is (N, C_in, H, W), ``w`` is (C_out, C_in, 3, 3). Bias is applied by
    the caller with a broadcast add. Implemented as im2col + matmul; the
    backward pass reuses the forward patch matrix.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or w.data.shape[2:] != (3, 3):
        raise ValueError(f"conv2d expects (N,C,H,W) and (Co,Ci,3,3), got {x.data.shape} and {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"conv2d channel mismatch: input {x.data.shape} vs kernel {w.data.shape}")
    n, c, h, wd = x.data.shape
    co = w.data.shape[0]
    wmat = w.data.reshape(co, c * 9).T
    cols = x._conv_cols if x._conv_cols is not None else _im2col(x.data)
    out_data = (cols @ wmat).reshape(n, h, wd, co).transpose(0, 3, 1, 2)
    # keep the patch matrix alive for the backward pass unless it is huge
    saved = cols if (cols is x._conv_cols or cols.nbytes <= 2 ** 28) else None

    def vjp(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * h * wd, co)
        if w.requires_grad:
            c_mat = saved if saved is not None else _im2col(x.data)
            w._accum((c_mat.T @ gmat).T.reshape(co, c, 3, 3))
        if x.requires_grad:
            dx = np.zeros((n, c, h + 2, wd + 2))
            for i in range(3):
                for j in range(3):
                    # dL/dx via correlation of the output grad with the kernel
                    piece = (gmat @ w.data[:, :, i, j]).reshape(n, h, wd, c)
                    dx[:, :, i : i + h, j : j + wd] += piece.transpose(0, 3, 1, 2)
            x._accum(dx[:, :, 1 : 1 + h, 1 : 1 + wd])

    return _make(np.ascontiguousarray(out_data), (x, w), vjp)


def maxpool2x2(x):
    """2x2 max pooling with stride 2; ties share the gradient evenly."""
    x = _as_tensor(x)
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2 needs even spatial dims, got {x.data.shape}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2)
    out_data = blocks.max(axis=(3, 5))

    def vjp(g):
        winners = blocks == out_data[:, :, :, None, :, None]
        counts = winners.sum(axis=(3, 5), keepdims=True)
        gx = winners * (g[:, :, :, None, :, None] / counts)
        x._accum(gx.reshape(n, c, h, w))

    return _make(out_data, (x,), vjp)


# -- composites ----------------------------------------------------------------


def linear(x, w, b):
    """Affine map ``x @ w + b`` with ``w`` stored as (in, out)."""
    return add(matmul(x, w), b)


def masked_mean(x, mask, axis):
    """Mean of ``x`` over ``axis`` counting only positions where ``mask`` is 1.

    ``mask`` is a constant 0/1 ndarray broadcastable to ``x``; each row must
    contain at least one active position.
    """
    x = _as_tensor(x)
    mask = np.asarray(mask, dtype=np.float64)
    ax = axis % x.data.ndim
    counts = np.broadcast_to(mask, x.data.shape).sum(axis=ax)
    if np.any(counts == 0):
        raise ValueError("masked_mean requires at least one active position per row")
    total = tsum(mul(x, Tensor(mask)), axis=ax)
    return mul(total, 1.0 / counts)


# operator sugar on Tensor ------------------------------------------------------

Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__neg__ = lambda self: mul(self, -1.0)
Tensor.__matmul__ = lambda self, other: matmul(self, other)
Tensor.__getitem__ = lambda self, idx: getitem(self, idx)
Tensor.tanh = tanh
Tensor.exp = exp
Tensor.square = square
Tensor.sum = tsum
Tensor.mean = tmean
Tensor.reshape = lambda self, shape: reshape(self, shape)
Tensor.transpose = lambda self, axes: transpose(self, axes)
