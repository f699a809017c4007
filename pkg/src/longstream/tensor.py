"""Dense float64 tensors with tape-based reverse-mode autodiff.

The op set is deliberately closed: matmul, add, mul, scale, silu,
layernorm, softmax_lastdim, concat, slice_axis, sum_all, mean_all, mse.
Everything else in the package is composed from these, so every
backward rule here is covered by finite-difference checks.

A :class:`Graph` is a tape: ops executed inside ``with Graph() as g:``
record themselves in append order, and ``g.backward(loss)`` replays the
tape in reverse exactly once.  Ops executed with no active graph are
plain numpy computations (the inference fast path), and tensors created
on an earlier tape are treated as constants by a later one, which is
what gives detached streaming context its no-gradient guarantee.
"""

import gc

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, GraphReuseError, OracleError

_ACTIVE = None


def _asarray(data):
    a = np.ascontiguousarray(data, dtype=np.float64)
    return a


class Tensor:
    """A dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad=False):
        self.data = _asarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self):
        """A constant view of this tensor: same values, no tape, no grad."""
        return Tensor(self.data)

    def copy(self):
        t = Tensor(self.data.copy(), self.requires_grad)
        return t

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # small amount of operator sugar; module functions are the real API
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("out", "bw")

    def __init__(self, out, bw):
        self.out = out
        self.bw = bw


class Graph:
    """Append-only tape; backward walks nodes in reverse append order."""

    def __init__(self):
        self.nodes = []
        self.leaves = []  # requires_grad leaves touched by any op
        self._leaf_ids = set()
        self._consumed = False
        self._gc_was_on = False

    def __enter__(self):
        global _ACTIVE
        if _ACTIVE is not None:
            raise ContractError("a graph is already active; one step owns its tape")
        _ACTIVE = self
        # a tape is thousands of short-lived closures; keep the cyclic GC
        # out of the hot loop and break the cycles ourselves in backward()
        self._gc_was_on = gc.isenabled()
        gc.disable()
        return self

    def __exit__(self, *exc):
        global _ACTIVE
        _ACTIVE = None
        if self._gc_was_on:
            gc.enable()
        return False

    def _touch_leaf(self, t):
        if id(t) not in self._leaf_ids:
            self._leaf_ids.add(id(t))
            self.leaves.append(t)

    def backward(self, loss):
        """Populate .grad on every requires_grad leaf this tape touched.

        Leaves not upstream of ``loss`` receive zero gradients.  Returns
        the list of touched leaves for introspection.
        """
        if self._consumed:
            raise GraphReuseError("backward() already ran on this graph")
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise ContractError("loss must be a scalar Tensor")
        if loss._tape is not self:
            raise ContractError("loss was not produced by this graph")
        self._consumed = True
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            node.bw(g)
        for leaf in self.leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
        self.nodes = []  # drop the closures: breaks tensor<->graph cycles
        return self.leaves


def _live(t):
    """Does gradient flow through t on the active tape?"""
    if t.requires_grad:
        if _ACTIVE is not None:
            _ACTIVE._touch_leaf(t)
        return True
    return t._tape is _ACTIVE and _ACTIVE is not None


def _record(out, parents_live, bw):
    if _ACTIVE is not None and parents_live:
        out._tape = _ACTIVE
        _ACTIVE.nodes.append(_Node(out, bw))
    return out


def _accum(t, g):
    if t.grad is None:
        t.grad = np.array(g)  # own the buffer; g may be a view
    else:
        t.grad = t.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

def matmul(a, b, transpose_b=False):
    """2-D matrix product a @ b (or a @ b.T with transpose_b)."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    inner_a = a.shape[1]
    inner_b = b.shape[1] if transpose_b else b.shape[0]
    if inner_a != inner_b:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} vs {b.shape}"
                             f"{' (transposed)' if transpose_b else ''}")
    bd = b.data.T if transpose_b else b.data
    out = Tensor(a.data @ bd)
    la, lb = _live(a), _live(b)
    if not (la or lb):
        return out

    ad, bdat = a.data, b.data

    def bw(g):
        if la:
            _accum(a, g @ bdat if transpose_b else g @ bdat.T)
        if lb:
            _accum(b, g.T @ ad if transpose_b else ad.T @ g)

    return _record(out, True, bw)


def add(a, b):
    """Elementwise sum with numpy broadcasting."""
    out = Tensor(a.data + b.data)
    la, lb = _live(a), _live(b)
    if not (la or lb):
        return out

    def bw(g):
        if la:
            _accum(a, _unbroadcast(g, a.data.shape))
        if lb:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _record(out, True, bw)


def mul(a, b):
    """Elementwise (Hadamard) product with numpy broadcasting."""
    out = Tensor(a.data * b.data)
    la, lb = _live(a), _live(b)
    if not (la or lb):
        return out
    ad, bd = a.data, b.data

    def bw(g):
        if la:
            _accum(a, _unbroadcast(g * bd, ad.shape))
        if lb:
            _accum(b, _unbroadcast(g * ad, bd.shape))

    return _record(out, True, bw)


def scale(a, s):
    """Multiply by a python scalar."""
    s = float(s)
    out = Tensor(a.data * s)
    if not _live(a):
        return out

    def bw(g):
        _accum(a, g * s)

    return _record(out, True, bw)


def silu(a):
    """x * sigmoid(x), numerically stable for large |x|."""
    out = Tensor(kernels.silu(a.data.reshape(1, -1)).reshape(a.data.shape))
    if not _live(a):
        return out
    x = a.data

    def bw(g):
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        _accum(a, g * s * (1.0 + x * (1.0 - s)))

    return _record(out, True, bw)


def layernorm(x, gain, bias, eps=1e-5):
    """Layer norm over the last axis with learned gain/bias."""
    d = x.data.shape[-1]
    flat = x.data.reshape(-1, d)
    out = Tensor(kernels.layernorm_rows(flat, gain.data, bias.data, eps).reshape(x.data.shape))
    lx, lg, lb = _live(x), _live(gain), _live(bias)
    if not (lx or lg or lb):
        return out
    xd = x.data

    def bw(g):
        mu = np.mean(xd, axis=-1, keepdims=True)
        var = np.mean((xd - mu) ** 2, axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mu) * inv
        if lg:
            _accum(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if lb:
            _accum(bias, g.reshape(-1, d).sum(axis=0))
        if lx:
            dxhat = g * gain.data
            dx = inv * (dxhat - np.mean(dxhat, axis=-1, keepdims=True)
                        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True))
            _accum(x, dx)

    return _record(out, True, bw)


def softmax_lastdim(x):
    """Softmax along the last axis; -inf entries come out as exactly 0."""
    if x.data.shape[-1] == 0:
        raise DimensionError("softmax over an empty last dimension")
    d = x.data.shape[-1]
    p = kernels.softmax_rows(x.data.reshape(-1, d)).reshape(x.data.shape)
    out = Tensor(p)
    if not _live(x):
        return out

    def bw(g):
        _accum(x, p * (g - np.sum(g * p, axis=-1, keepdims=True)))

    return _record(out, True, bw)


def concat(tensors, axis=0):
    """Concatenate along one axis."""
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    lives = [_live(t) for t in tensors]
    if not any(lives):
        return out
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, live, lo, hi in zip(tensors, lives, offsets[:-1], offsets[1:]):
            if live:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(t, g[tuple(idx)])

    return _record(out, True, bw)


def slice_axis(x, axis, start, stop):
    """Contiguous slice [start:stop) along one axis."""
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    out = Tensor(x.data[tuple(idx)])
    if not _live(x):
        return out
    shape = x.data.shape

    def bw(g):
        full = np.zeros(shape)
        full[tuple(idx)] = g
        _accum(x, full)

    return _record(out, True, bw)


def sum_all(x):
    """Sum of all entries, as a scalar tensor."""
    out = Tensor(np.sum(x.data))
    if not _live(x):
        return out

    def bw(g):
        _accum(x, np.broadcast_to(g, x.data.shape).copy())

    return _record(out, True, bw)


def mean_all(x):
    out = Tensor(np.mean(x.data))
    if not _live(x):
        return out
    n = x.data.size

    def bw(g):
        _accum(x, np.broadcast_to(g / n, x.data.shape).copy())

    return _record(out, True, bw)


def mse(a, b):
    """Mean squared error between same-shape tensors, as a scalar."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out = Tensor(np.mean(diff ** 2))
    la, lb = _live(a), _live(b)
    if not (la or lb):
        return out
    n = diff.size

    def bw(g):
        d = (2.0 / n) * diff * g
        if la:
            _accum(a, d)
        if lb:
            _accum(b, -d)

    return _record(out, True, bw)


# ---------------------------------------------------------------------------
# verification oracle
# ---------------------------------------------------------------------------

def grad_check(f, params, eps=1e-5, n_samples=32, rng=None):
    """Max relative error between analytic grads and central differences.

    ``f`` must be a deterministic zero-arg callable returning a scalar
    Tensor built from ``params`` (a dict name -> Tensor).  Samples at
    least ``n_samples`` coordinates per parameter tensor.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ContractError(f"eps {eps} outside [1e-7, 1e-3]")
    rng = rng or np.random.default_rng(0)

    v1 = f().data.item()
    v2 = f().data.item()
    if v1 != v2:
        raise OracleError(f"f is not deterministic: {v1!r} != {v2!r}")

    for p in params.values():
        p.grad = None
    with Graph() as g:
        loss = f()
        g.backward(loss)

    worst = 0.0
    for name, p in params.items():
        if p.grad is None:
            raise OracleError(f"parameter {name} received no gradient")
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= n_samples else rng.choice(n, size=n_samples, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            fp = f().data.item()
            flat[c] = orig - eps
            fm = f().data.item()
            flat[c] = orig
            numeric = (fp - fm) / (2 * eps)
            analytic = gflat[c]
            err = abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-12)
            if err > worst:
                worst = err
    return worst
