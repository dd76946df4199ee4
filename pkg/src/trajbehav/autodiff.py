"""Reverse-mode gradient tape over dense numpy arrays.

Only the primitives the classifiers need are implemented: dense matmul,
broadcast add/mul, pointwise activations, valid 1-D cross-correlation,
max-over-time pooling, a fused LSTM cell, concatenation, elementwise
averaging, reshape, and softmax cross-entropy. Everything is deterministic:
identical inputs produce bit-identical outputs.

Two precision modes are supported by construction: build parameters in
float64 ("verify", required for finite-difference checks) or float32
("fast", for training); all ops propagate the input dtype.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError, DimensionError

DTYPES = {"verify": np.float64, "fast": np.float32}


class Tensor:
    """A node on the gradient tape wrapping a dense numpy array."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad[...] = 0.0

    def backward(self):
        """Backpropagate from a scalar output through the recorded tape."""
        if self.data.size != 1:
            raise DimensionError(
                f"backward() requires a scalar output, got shape {self.data.shape}"
            )
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in order:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """A named trainable tensor whose gradient buffer always exists."""

    __slots__ = ("name",)

    def __init__(self, value, name):
        super().__init__(np.asarray(value), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.data.shape})"


def _toposort(root):
    """Reverse topological order of the tape reachable from `root`."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order[::-1]


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _needs_grad(*tensors):
    return any(t.requires_grad for t in tensors)


def _unbroadcast(g, shape):
    """Reduce gradient `g` back to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def matmul(a, b):
    """2-D matrix product with backward dA = g Bᵀ, dB = Aᵀ g."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul shapes incompatible: {a.data.shape} x {b.data.shape}"
        )
    out_data = a.data @ b.data
    if not _needs_grad(a, b):
        return Tensor(out_data)

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return Tensor(out_data, requires_grad=True, parents=(a, b), backward=backward)


def add(a, b):
    """Elementwise sum; `b` may broadcast (e.g. a bias row)."""
    out_data = a.data + b.data
    if not _needs_grad(a, b):
        return Tensor(out_data)

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, requires_grad=True, parents=(a, b), backward=backward)


def mul(a, b):
    """Elementwise (broadcasting) product."""
    out_data = a.data * b.data
    if not _needs_grad(a, b):
        return Tensor(out_data)

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, requires_grad=True, parents=(a, b), backward=backward)


def relu(x):
    out_data = np.maximum(x.data, 0)
    if not x.requires_grad:
        return Tensor(out_data)

    mask = x.data > 0

    def backward(g):
        _accum(x, g * mask)

    return Tensor(out_data, requires_grad=True, parents=(x,), backward=backward)


def _sigmoid(z):
    # piecewise form avoids exp overflow for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    out_data = _sigmoid(x.data)
    if not x.requires_grad:
        return Tensor(out_data)

    def backward(g):
        _accum(x, g * out_data * (1.0 - out_data))

    return Tensor(out_data, requires_grad=True, parents=(x,), backward=backward)


def tanh(x):
    out_data = np.tanh(x.data)
    if not x.requires_grad:
        return Tensor(out_data)

    def backward(g):
        _accum(x, g * (1.0 - out_data * out_data))

    return Tensor(out_data, requires_grad=True, parents=(x,), backward=backward)


def reshape(x, shape):
    out_data = x.data.reshape(shape)
    if not x.requires_grad:
        return Tensor(out_data)

    def backward(g):
        _accum(x, g.reshape(x.data.shape))

    return Tensor(out_data, requires_grad=True, parents=(x,), backward=backward)


def concat(tensors, axis=1):
    """Concatenate along `axis`; backward splits the gradient."""
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    if not _needs_grad(*tensors):
        return Tensor(out_data)

    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return Tensor(out_data, requires_grad=True, parents=tuple(tensors), backward=backward)


def mean_tensors(tensors):
    """Elementwise mean of same-shape tensors (time-average readout)."""
    n = len(tensors)
    if n == 0:
        raise DimensionError("mean_tensors requires at least one tensor")
    out_data = tensors[0].data.copy()
    for t in tensors[1:]:
        out_data += t.data
    out_data /= n
    if not _needs_grad(*tensors):
        return Tensor(out_data)

    def backward(g):
        share = g / n
        for t in tensors:
            _accum(t, share)

    return Tensor(out_data, requires_grad=True, parents=tuple(tensors), backward=backward)


def conv1d_valid(x, w, b):
    """Valid (no-padding) cross-correlation over the last axis.

    x: (B, C_in, T), w: (C_out, C_in, k), b: (C_out,) -> (B, C_out, T-k+1).
    """
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise DimensionError(
            f"conv1d_valid expects 3-D input/kernels, got {x.data.shape} / {w.data.shape}"
        )
    _, c_in, t_len = x.data.shape
    c_out, c_in_w, k = w.data.shape
    if c_in != c_in_w:
        raise DimensionError(
            f"conv1d_valid channel mismatch: input has {c_in}, kernels expect {c_in_w}"
        )
    if k > t_len:
        raise ConfigError(
            f"conv1d_valid kernel width {k} exceeds sequence length {t_len}"
        )
    if b.data.shape != (c_out,):
        raise DimensionError(
            f"conv1d_valid bias shape {b.data.shape} != ({c_out},)"
        )
    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=2)
    out_data = np.einsum("bclk,ock->bol", windows, w.data) + b.data[None, :, None]
    if not _needs_grad(x, w, b):
        return Tensor(out_data)

    out_len = t_len - k + 1

    def backward(g):
        _accum(b, g.sum(axis=(0, 2)))
        _accum(w, np.einsum("bol,bclk->ock", g, windows))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for j in range(k):
                gx[:, :, j:j + out_len] += np.einsum("bol,oc->bcl", g, w.data[:, :, j])
            _accum(x, gx)

    return Tensor(out_data, requires_grad=True, parents=(x, w, b), backward=backward)


def max_over_time(x):
    """Per-channel max over the last axis; ties route the gradient to the
    first occurrence."""
    if x.data.ndim != 3:
        raise DimensionError(f"max_over_time expects (B, C, L), got {x.data.shape}")
    if x.data.shape[2] < 1:
        raise DimensionError("max_over_time needs at least one time step")
    idx = np.argmax(x.data, axis=2)
    out_data = np.take_along_axis(x.data, idx[:, :, None], axis=2)[:, :, 0]
    if not x.requires_grad:
        return Tensor(out_data)

    def backward(g):
        gx = np.zeros_like(x.data)
        bsz, chans = idx.shape
        gx[np.arange(bsz)[:, None], np.arange(chans)[None, :], idx] = g
        _accum(x, gx)

    return Tensor(out_data, requires_grad=True, parents=(x,), backward=backward)


def lstm_cell(x, h, c, wx, wh, b):
    """Fused LSTM cell step.

    Gate layout in the 4H pre-activation is [input, forget, candidate,
    output]; c' = f⊙c + i⊙g, h' = o⊙tanh(c'). Returns (h', c') as two tape
    nodes sharing one forward cache; their backward contributions add.
    """
    bsz, d_in = x.data.shape
    hid = h.data.shape[1]
    if h.data.shape != (bsz, hid) or c.data.shape != (bsz, hid):
        raise DimensionError(
            f"lstm_cell state shapes {h.data.shape}/{c.data.shape} inconsistent"
        )
    if wx.data.shape != (d_in, 4 * hid) or wh.data.shape != (hid, 4 * hid) \
            or b.data.shape != (4 * hid,):
        raise DimensionError(
            "lstm_cell weight shapes inconsistent: "
            f"wx={wx.data.shape}, wh={wh.data.shape}, b={b.data.shape} "
            f"for d_in={d_in}, hidden={hid}"
        )

    pre = x.data @ wx.data + h.data @ wh.data + b.data
    gi = _sigmoid(pre[:, :hid])
    gf = _sigmoid(pre[:, hid:2 * hid])
    gg = np.tanh(pre[:, 2 * hid:3 * hid])
    go = _sigmoid(pre[:, 3 * hid:])
    c_new = gf * c.data + gi * gg
    tc = np.tanh(c_new)
    h_new = go * tc

    parents = (x, h, c, wx, wh, b)
    if not _needs_grad(*parents):
        return Tensor(h_new), Tensor(c_new)

    def _common(gc, dpo):
        # gc: gradient w.r.t. c'; dpo: gradient w.r.t. output-gate pre-act
        dpi = (gc * gg) * gi * (1.0 - gi)
        dpf = (gc * c.data) * gf * (1.0 - gf)
        dpg = (gc * gi) * (1.0 - gg * gg)
        dpre = np.concatenate([dpi, dpf, dpg, dpo], axis=1)
        _accum(x, dpre @ wx.data.T)
        _accum(h, dpre @ wh.data.T)
        _accum(c, gc * gf)
        _accum(wx, x.data.T @ dpre)
        _accum(wh, h.data.T @ dpre)
        _accum(b, dpre.sum(axis=0))

    def backward_h(g):
        gc = g * go * (1.0 - tc * tc)
        dpo = (g * tc) * go * (1.0 - go)
        _common(gc, dpo)

    def backward_c(g):
        _common(g, np.zeros_like(go))

    h_out = Tensor(h_new, requires_grad=True, parents=parents, backward=backward_h)
    c_out = Tensor(c_new, requires_grad=True, parents=parents, backward=backward_c)
    return h_out, c_out


def softmax(logits):
    """Row-stabilized softmax of a plain array."""
    z = np.asarray(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels, class_weights=None):
    """Weighted mean of -log softmax(logits)[label] over the batch.

    With per-class weights the batch is normalized by the sum of the sample
    weights (so uniform weights reduce to the plain mean).
    """
    z = logits.data
    if z.ndim != 2:
        raise DimensionError(f"logits must be 2-D, got {z.shape}")
    labels = np.asarray(labels)
    n, c = z.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} != ({n},)")
    bad = np.nonzero((labels < 0) | (labels >= c))[0]
    if bad.size:
        raise DataError(
            f"label out of range [0, {c}) at sample index {int(bad[0])}"
        )

    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1))
    nll = lse - shifted[np.arange(n), labels]
    if class_weights is not None:
        w = np.asarray(class_weights, dtype=z.dtype)[labels]
    else:
        w = np.ones(n, dtype=z.dtype)
    wsum = w.sum()
    loss = float((w * nll).sum() / wsum)
    out_data = np.asarray(loss, dtype=z.dtype)
    if not logits.requires_grad:
        return Tensor(out_data)

    def backward(g):
        probs = np.exp(shifted - lse[:, None])
        probs[np.arange(n), labels] -= 1.0
        _accum(logits, (float(g) / wsum) * w[:, None] * probs)

    return Tensor(out_data, requires_grad=True, parents=(logits,), backward=backward)


def dense(x, w, b):
    """Affine layer x @ w + b."""
    return add(matmul(x, w), b)
