"""Dense f32 tensors with tape-based reverse-mode automatic differentiation.

Everything is numpy underneath. Operations executed while a ``Tape`` is
active are recorded; ``Tape.backward`` replays the records in reverse and
returns a gradient map. With no active tape, operations run eagerly and
cost nothing extra, which is how evaluation-mode code paths run.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "ShapeError",
    "no_grad",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "sqrt",
    "relu",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "slice_rows",
    "gather_pairs",
    "tsum",
    "tmean",
    "softmax",
    "log_softmax",
    "l2_normalize",
    "cosine_similarity",
    "conv2d",
    "max_pool2",
    "global_avg_pool",
    "linear",
    "BNParams",
    "batch_norm",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """A dense, row-major float32 array plus an optional tape node id."""

    __slots__ = ("data", "node")

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.node = None  # (tape, id) once recorded on a tape

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

    def detach(self):
        """A view of the same values with no tape history."""
        return Tensor(self.data)

    def copy(self):
        t = Tensor(self.data.copy())
        return t

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype=f32)"

    # arithmetic sugar; constants stay constants (no gradient flows to them)
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


_TLS = threading.local()


def _tape_stack():
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class no_grad:
    """Context manager that suspends recording on the active tape."""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False


class Tape:
    """Ordered record of operations; inputs always precede their outputs."""

    def __init__(self):
        self._records = []  # (out_id, in_ids, backward_fn)
        self._tensors = {}  # node id -> Tensor, keeps operands alive
        self._count = 0

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def _node_id(self, t: Tensor) -> int:
        node = t.node
        if node is not None and node[0] is self:
            return node[1]
        nid = self._count
        self._count += 1
        t.node = (self, nid)
        self._tensors[nid] = t
        return nid

    def watch(self, t: Tensor) -> Tensor:
        """Register a leaf so it shows up in the gradient map even if unused."""
        self._node_id(t)
        return t

    def record(self, out: Tensor, inputs, backward) -> Tensor:
        in_ids = tuple(self._node_id(t) for t in inputs)
        out_id = self._node_id(out)
        self._records.append((out_id, in_ids, backward))
        return out

    def backward(self, loss: Tensor) -> "Gradients":
        """Accumulate d(loss)/d(node) for every node reachable from ``loss``.

        The loss must be a scalar recorded on this tape. Nodes not on a path
        to the loss simply stay absent from the map and read back as zeros.
        """
        if loss.data.shape != ():
            raise ShapeError(
                f"backward needs a scalar loss, got shape {loss.data.shape}"
            )
        if loss.node is None or loss.node[0] is not self:
            raise ValueError("loss tensor was not recorded on this tape")
        grads = {loss.node[1]: np.ones((), dtype=np.float32)}
        for out_id, in_ids, backward in reversed(self._records):
            g = grads.get(out_id)
            if g is None:
                continue
            for in_id, gi in zip(in_ids, backward(g)):
                if gi is None:
                    continue
                acc = grads.get(in_id)
                grads[in_id] = gi if acc is None else acc + gi
        return Gradients(self, grads)


def backward(tape: Tape, loss: "Tensor") -> "Gradients":
    """Free-function form of Tape.backward."""
    return tape.backward(loss)


class Gradients:
    """Gradient map from tape nodes back to numpy arrays."""

    def __init__(self, tape: Tape, grads):
        self._tape = tape
        self._grads = grads

    def of(self, t: Tensor) -> np.ndarray:
        """Gradient for ``t``; zeros if it never reached the loss."""
        node = t.node
        if node is not None and node[0] is self._tape:
            g = self._grads.get(node[1])
            if g is not None:
                return np.broadcast_to(g, t.data.shape).astype(np.float32)
        return np.zeros(t.data.shape, dtype=np.float32)

    def __getitem__(self, t: Tensor) -> np.ndarray:
        return self.of(t)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, inverting numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.astype(np.float32, copy=False)


def _record(out, inputs, backward):
    tape = _active_tape()
    if tape is not None:
        tape.record(out, inputs, backward)
    return out


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data + b.data)
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data - b.data)
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data * b.data)
    return _record(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data / b.data)
    return _record(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def neg(a):
    a = _wrap(a)
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def exp(a):
    a = _wrap(a)
    out = Tensor(np.exp(a.data))
    return _record(out, (a,), lambda g: (g * out.data,))


def log(a):
    a = _wrap(a)
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = _wrap(a)
    out = Tensor(np.sqrt(a.data))
    return _record(out, (a,), lambda g: (g / (2.0 * out.data),))


def relu(a):
    a = _wrap(a)
    out = Tensor(np.maximum(a.data, 0.0))
    return _record(out, (a,), lambda g: (g * (a.data > 0),))


# ---------------------------------------------------------------------------
# shape manipulation


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    return _record(
        out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g)
    )


def transpose(a):
    a = _wrap(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {a.shape}")
    out = Tensor(a.data.T.copy())
    return _record(out, (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = _wrap(a)
    out = Tensor(a.data.reshape(shape))
    orig = a.data.shape
    return _record(out, (a,), lambda g: (g.reshape(orig),))


def concat(tensors, axis=0):
    ts = [_wrap(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(ts), backward)


def slice_rows(a, start, stop):
    a = _wrap(a)
    out = Tensor(a.data[start:stop].copy())
    shape = a.data.shape

    def backward(g):
        full = np.zeros(shape, dtype=np.float32)
        full[start:stop] = g
        return (full,)

    return _record(out, (a,), backward)


def gather_pairs(a, rows, cols):
    """Pick ``a[rows[i], cols[i]]`` into a vector; duplicates accumulate."""
    a = _wrap(a)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    out = Tensor(a.data[rows, cols])
    shape = a.data.shape

    def backward(g):
        full = np.zeros(shape, dtype=np.float32)
        np.add.at(full, (rows, cols), g)
        return (full,)

    return _record(out, (a,), backward)


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None, keepdims=False):
    a = _wrap(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.data.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(np.float32),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).astype(np.float32),)

    return _record(out, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = _wrap(a)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    shape = a.data.shape
    if axis is None:
        count = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([shape[i] for i in ax]))

    def backward(g):
        if axis is None:
            return ((np.broadcast_to(g, shape) / count).astype(np.float32),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return ((np.broadcast_to(g, shape) / count).astype(np.float32),)

    return _record(out, (a,), backward)


# ---------------------------------------------------------------------------
# normalization and similarity


def log_softmax(a, axis=-1):
    a = _wrap(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = Tensor(shifted - lse)

    def backward(g):
        return (g - np.exp(out.data) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (a,), backward)


def softmax(a, axis=-1):
    a = _wrap(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    out = Tensor(e / e.sum(axis=axis, keepdims=True))

    def backward(g):
        y = out.data
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(out, (a,), backward)


def l2_normalize(a, axis=-1):
    """Scale along ``axis`` to unit Euclidean norm. Errors on ~zero vectors."""
    a = _wrap(a)
    norms_sq = tsum(mul(a, a), axis=axis, keepdims=True)
    if np.any(norms_sq.data <= 1e-40):
        raise ValueError("l2_normalize: vector norm too close to zero")
    return div(a, sqrt(norms_sq))


def cosine_similarity(u, v) -> float:
    """Plain-number cosine between two 1-D vectors, clamped into [-1, 1]."""
    ud = u.data if isinstance(u, Tensor) else np.asarray(u, dtype=np.float32)
    vd = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float32)
    if ud.shape != vd.shape or ud.ndim != 1:
        raise ShapeError(f"cosine_similarity shapes {ud.shape} vs {vd.shape}")
    nu = float(np.linalg.norm(ud))
    nv = float(np.linalg.norm(vd))
    if nu <= 1e-20 or nv <= 1e-20:
        raise ValueError("cosine_similarity: zero vector")
    return float(np.clip(float(np.dot(ud, vd)) / (nu * nv), -1.0, 1.0))


# ---------------------------------------------------------------------------
# convolution and pooling


def conv2d(x, w, stride=1, padding=0):
    """Cross-correlate NCHW input with KCkk filters. No bias term.

    Output spatial size is (H + 2*padding - kh)//stride + 1.
    """
    x, w = _wrap(x), _wrap(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input/weight, got {x.shape}, {w.shape}")
    n, c, h, wid = x.shape
    k, cw, kh, kw = w.shape
    if c != cw:
        raise ShapeError(f"conv2d channel mismatch: input {c} vs weight {cw}")
    hp, wp = h + 2 * padding, wid + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    col = np.empty((n, c, kh, kw, ho, wo), dtype=np.float32)
    for ki in range(kh):
        hi = ki + (ho - 1) * stride + 1
        for kj in range(kw):
            wj = kj + (wo - 1) * stride + 1
            col[:, :, ki, kj] = xp[:, :, ki:hi:stride, kj:wj:stride]
    colm = col.reshape(n, c * kh * kw, ho * wo)
    wm = w.data.reshape(k, c * kh * kw)
    out = Tensor(np.matmul(wm[None], colm).reshape(n, k, ho, wo))

    def backward(g):
        gm = np.ascontiguousarray(g.reshape(n, k, ho * wo))
        dw = np.matmul(gm, colm.transpose(0, 2, 1)).sum(axis=0).reshape(w.data.shape)
        dcol = np.matmul(wm.T[None], gm).reshape(n, c, kh, kw, ho, wo)
        dxp = np.zeros((n, c, hp, wp), dtype=np.float32)
        for ki in range(kh):
            hi = ki + (ho - 1) * stride + 1
            for kj in range(kw):
                wj = kj + (wo - 1) * stride + 1
                dxp[:, :, ki:hi:stride, kj:wj:stride] += dcol[:, :, ki, kj]
        dx = dxp[:, :, padding : hp - padding, padding : wp - padding] if padding else dxp
        return (dx, dw.astype(np.float32))

    return _record(out, (x, w), backward)


def max_pool2(x):
    """2x2 max pooling, stride 2. Spatial dims must be even.

    Gradient routes to the first maximal element of each window, scanning
    row-major, so ties never receive duplicated gradient.
    """
    x = _wrap(x)
    if x.ndim != 4:
        raise ShapeError(f"max_pool2 expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2 needs even spatial dims, got {h}x{w}")
    corners = (
        x.data[:, :, 0::2, 0::2],
        x.data[:, :, 0::2, 1::2],
        x.data[:, :, 1::2, 0::2],
        x.data[:, :, 1::2, 1::2],
    )
    out = Tensor(np.maximum(np.maximum(corners[0], corners[1]),
                            np.maximum(corners[2], corners[3])))

    def backward(g):
        dx = np.zeros((n, c, h, w), dtype=np.float32)
        taken = np.zeros(out.data.shape, dtype=bool)
        slots = ((0, 0), (0, 1), (1, 0), (1, 1))
        for corner, (di, dj) in zip(corners, slots):
            hit = (corner == out.data) & ~taken
            dx[:, :, di::2, dj::2] = np.where(hit, g, 0.0)
            taken |= hit
        return (dx,)

    return _record(out, (x,), backward)


def global_avg_pool(x):
    """Mean over the spatial dims: [N,C,H,W] -> [N,C]."""
    x = _wrap(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW, got {x.shape}")
    return tmean(x, axis=(2, 3))


def linear(x, w, b=None):
    """Fully connected layer: x @ w (+ b)."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


# ---------------------------------------------------------------------------
# batch normalization


class BNParams:
    """Per-channel batch-norm state: affine parameters plus running stats.

    ``gamma`` and ``beta`` are trainable Tensors; the running statistics are
    plain arrays updated in train mode with momentum 0.1 (unbiased variance).
    """

    MOMENTUM = 0.1

    def __init__(self, channels, eps=1e-5):
        if eps <= 0:
            raise ValueError(f"batch-norm eps must be positive, got {eps}")
        self.gamma = Tensor(np.ones(channels, dtype=np.float32))
        self.beta = Tensor(np.zeros(channels, dtype=np.float32))
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.eps = float(eps)

    @property
    def channels(self):
        return self.gamma.data.shape[0]

    def copy(self):
        out = BNParams(self.channels, self.eps)
        out.gamma = Tensor(self.gamma.data.copy())
        out.beta = Tensor(self.beta.data.copy())
        out.running_mean = self.running_mean.copy()
        out.running_var = self.running_var.copy()
        return out


def batch_norm(x, bn: BNParams, mode="train", update_stats=True):
    """Normalize NCHW activations per channel.

    Eval mode normalizes with the stored running statistics and is a pure
    function of (input, params). Train mode normalizes with batch statistics
    (gradients flow through them) and, when ``update_stats`` is set, advances
    the running stats with momentum 0.1 using the unbiased batch variance.
    """
    x = _wrap(x)
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects NCHW, got {x.shape}")
    c = x.shape[1]
    if bn.channels != c:
        raise ShapeError(f"batch_norm channel mismatch: input {c} vs params {bn.channels}")
    if bn.eps <= 0:
        raise ValueError(f"batch-norm eps must be positive, got {bn.eps}")
    if mode not in ("train", "eval"):
        raise ValueError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")

    bshape = (1, c, 1, 1)
    axes = (0, 2, 3)
    if mode == "eval":
        # scale/shift in f64: per-channel work is tiny and the single f32
        # rounding keeps scaled-vs-unscaled surgery comparisons at ~1 ulp
        inv64 = 1.0 / np.sqrt(bn.running_var.astype(np.float64) + bn.eps)
        scale = (bn.gamma.data * inv64).astype(np.float32).reshape(bshape)
        shift = (
            bn.beta.data - bn.running_mean.astype(np.float64) * bn.gamma.data * inv64
        ).astype(np.float32).reshape(bshape)
        out = Tensor(x.data * scale + shift)
        rm = bn.running_mean.reshape(bshape)
        inv_b = inv64.astype(np.float32).reshape(bshape)

        def backward_eval(g):
            dgamma = (g * (x.data - rm) * inv_b).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            return (g * scale, dgamma, dbeta)

        return _record(out, (x, bn.gamma, bn.beta), backward_eval)

    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.float32(bn.eps))
    xhat = centered * inv
    out = Tensor(xhat * bn.gamma.data.reshape(bshape) + bn.beta.data.reshape(bshape))
    m_count = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
    gamma_b = bn.gamma.data.reshape(bshape)

    def backward_train(g):
        dbeta = g.sum(axis=axes)
        dgamma = (g * xhat).sum(axis=axes)
        gg = g * gamma_b
        gg_sum = gg.sum(axis=axes, keepdims=True)
        gx_sum = (gg * xhat).sum(axis=axes, keepdims=True)
        dx = (inv / m_count) * (m_count * gg - gg_sum - xhat * gx_sum)
        return (dx.astype(np.float32), dgamma, dbeta)

    result = _record(out, (x, bn.gamma, bn.beta), backward_train)
    if update_stats:
        unbiased = var.reshape(c) * (m_count / max(m_count - 1, 1))
        mom = BNParams.MOMENTUM
        bn.running_mean[:] = (1 - mom) * bn.running_mean + mom * mu.reshape(c)
        bn.running_var[:] = (1 - mom) * bn.running_var + mom * unbiased
    return result
