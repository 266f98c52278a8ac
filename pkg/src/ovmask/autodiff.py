"""Dense real tensors with reverse-mode automatic differentiation.

A single recording tape (`Graph`) stores operations in execution order;
`backward` walks it in exact reverse, accumulating gradients with `+=` into
every tensor that requires them. Leaf gradients are zeroed explicitly by the
trainer, never implicitly, so one parameter set can serve several loss
branches in the same step.

Storage is float32. `grad_check` re-evaluates the computation with tensors
promoted to float64 for its central-difference oracle, which keeps the
oracle independent of float32 forward noise.
"""

import math
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DegenerateNormError, ShapeError

DEFAULT_DTYPE = np.float32


class _Node:
    __slots__ = ("out", "parents", "backward_fn")

    def __init__(self, out, parents, backward_fn):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn


class Graph:
    """Tape of recorded operations plus a registry of leaf tensors."""

    def __init__(self):
        self.nodes = []
        self.leaves = []

    def record(self, node):
        self.nodes.append(node)

    def register_leaf(self, tensor):
        self.leaves.append(tensor)

    def clear(self):
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)


_default_graph = Graph()
_grad_enabled = True


def active_graph():
    return _default_graph


def reset_graph():
    _default_graph.clear()


@contextmanager
def use_graph(graph):
    global _default_graph
    prev = _default_graph
    _default_graph = graph
    try:
        yield graph
    finally:
        _default_graph = prev


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Row-major real array with an optional autodiff graph handle."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=DEFAULT_DTYPE):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @classmethod
    def _wrap(cls, data, requires_grad):
        # internal: keep whatever dtype the kernel produced
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        return t

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
        return self.data.item()

    def detach(self):
        return stop_gradient(self)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)


def parameter(data, dtype=DEFAULT_DTYPE):
    """Leaf tensor that accumulates gradient, registered with the active graph."""
    t = Tensor(data, requires_grad=True, dtype=dtype)
    active_graph().register_leaf(t)
    return t


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    # plain scalars/arrays enter as non-grad f32 constants so they never
    # silently promote the production path to float64
    return Tensor(np.asarray(x, dtype=DEFAULT_DTYPE), requires_grad=False)


def _const(arr):
    # dtype-preserving non-grad constant (used by stabilizers under float64)
    return Tensor._wrap(np.asarray(arr), False)


def _accumulate(tensor, g):
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        if np.shape(g) == tensor.data.shape:
            tensor.grad = np.array(g, dtype=tensor.data.dtype)
        else:
            tensor.grad = np.broadcast_to(g, tensor.data.shape).astype(tensor.data.dtype, copy=True)
    else:
        tensor.grad += g


def _record(out, parents, backward_fn):
    if _grad_enabled and out.requires_grad:
        active_graph().record(_Node(out, parents, backward_fn))


def _needs_grad(*tensors):
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def backward(root, retain_intermediates=False):
    """Seed d(root)=1 and replay the active tape in reverse recording order.

    Gradients on intermediate (op output) tensors are consumed as the walk
    passes them, so repeated backward calls on one tape only re-propagate the
    subgraph of the new root; leaves keep accumulating until zeroed.
    """
    if root.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        raise ContractError("backward root does not require grad")
    if root.grad is None:
        root.grad = np.zeros_like(root.data)
    root.grad += np.ones_like(root.data)
    for node in reversed(active_graph().nodes):
        g = node.out.grad
        if g is None or node.backward_fn is None:
            continue
        node.backward_fn(g)
        if not retain_intermediates:
            node.out.grad = None


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor._wrap(a.data + b.data, _needs_grad(a, b))

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    _record(out, (a, b), backward_fn)
    return out


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor._wrap(a.data - b.data, _needs_grad(a, b))

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    _record(out, (a, b), backward_fn)
    return out


def neg(a):
    a = _as_tensor(a)
    out = Tensor._wrap(-a.data, _needs_grad(a))

    def backward_fn(g):
        _accumulate(a, -g)

    _record(out, (a,), backward_fn)
    return out


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor._wrap(a.data * b.data, _needs_grad(a, b))

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    _record(out, (a, b), backward_fn)
    return out


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor._wrap(a.data / b.data, _needs_grad(a, b))

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    _record(out, (a, b), backward_fn)
    return out


def matmul(a, b):
    """Matrix product. Supports 2D x 2D, stacked ND x ND, and ND x 2D."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    out = Tensor._wrap(np.matmul(a.data, b.data), _needs_grad(a, b))

    def backward_fn(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    _record(out, (a, b), backward_fn)
    return out


def texp(a):
    a = _as_tensor(a)
    out = Tensor._wrap(np.exp(a.data), _needs_grad(a))

    def backward_fn(g):
        _accumulate(a, g * out.data)

    _record(out, (a,), backward_fn)
    return out


def tlog(a):
    a = _as_tensor(a)
    out = Tensor._wrap(np.log(a.data), _needs_grad(a))

    def backward_fn(g):
        _accumulate(a, g / a.data)

    _record(out, (a,), backward_fn)
    return out


def power(a, p):
    """Elementwise a**p for a constant real exponent."""
    a = _as_tensor(a)
    p = float(p)
    out = Tensor._wrap(a.data**p, _needs_grad(a))

    def backward_fn(g):
        _accumulate(a, g * p * a.data ** (p - 1.0))

    _record(out, (a,), backward_fn)
    return out


def clip_min(a, floor):
    """max(a, floor); clamped entries receive zero gradient."""
    a = _as_tensor(a)
    floor = float(floor)
    out = Tensor._wrap(np.maximum(a.data, floor), _needs_grad(a))

    def backward_fn(g):
        _accumulate(a, g * (a.data > floor))

    _record(out, (a,), backward_fn)
    return out


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = Tensor._wrap(a.data.sum(axis=axis, keepdims=keepdims), _needs_grad(a))

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    _record(out, (a,), backward_fn)
    return out


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def mean_pool(a, axis=-2):
    """Average over the token axis of a (..., T, D) feature stack."""
    return mean(a, axis=axis)


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.data.shape
    out = Tensor._wrap(a.data.reshape(shape), _needs_grad(a))

    def backward_fn(g):
        _accumulate(a, g.reshape(old))

    _record(out, (a,), backward_fn)
    return out


def transpose(a, axes=None):
    a = _as_tensor(a)
    out = Tensor._wrap(np.transpose(a.data, axes), _needs_grad(a))
    if axes is None:
        inverse = None
    else:
        inverse = np.argsort(axes)

    def backward_fn(g):
        _accumulate(a, np.transpose(g, inverse))

    _record(out, (a,), backward_fn)
    return out


def broadcast_to(a, shape):
    a = _as_tensor(a)
    out = Tensor._wrap(np.broadcast_to(a.data, shape).copy(), _needs_grad(a))

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))

    _record(out, (a,), backward_fn)
    return out


def stop_gradient(a):
    """Identical values; contributes zero gradient to `a` on backward."""
    a = _as_tensor(a)
    return Tensor._wrap(a.data, False)


def gather_tokens(a, idx):
    """Select token rows: (..., T, D) gathered at (..., K) -> (..., K, D)."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if a.data.ndim == 2:
        if idx.ndim != 1:
            raise ShapeError("2D input takes a 1D index set")
        out_data = a.data[idx]
    else:
        if idx.ndim != a.data.ndim - 1:
            raise ShapeError(f"index rank {idx.ndim} does not match tokens {a.data.shape}")
        out_data = np.take_along_axis(a.data, idx[..., None], axis=-2)
    out = Tensor._wrap(out_data.copy(), _needs_grad(a))

    def backward_fn(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        if a.data.ndim == 2:
            np.add.at(full, idx, g)
        else:
            flat = full.reshape((-1,) + full.shape[-2:])
            gf = g.reshape((-1,) + g.shape[-2:])
            idxf = idx.reshape((-1, idx.shape[-1]))
            rows = np.arange(flat.shape[0])[:, None]
            np.add.at(flat, (rows, idxf), gf)
        _accumulate(a, full)

    _record(out, (a,), backward_fn)
    return out


def scatter_tokens(values, idx, length):
    """Place token rows (..., K, D) at indices (..., K) in a zeroed (..., length, D)."""
    values = _as_tensor(values)
    idx = np.asarray(idx, dtype=np.int64)
    if values.data.ndim == 2:
        if idx.ndim != 1:
            raise ShapeError("2D input takes a 1D index set")
        full = np.zeros((length, values.data.shape[-1]), dtype=values.data.dtype)
        np.add.at(full, idx, values.data)
    else:
        if idx.shape != values.data.shape[:-1]:
            raise ShapeError(f"index shape {idx.shape} does not match values {values.data.shape}")
        full = np.zeros(values.data.shape[:-2] + (length, values.data.shape[-1]), dtype=values.data.dtype)
        flat = full.reshape((-1,) + full.shape[-2:])
        vf = values.data.reshape((-1,) + values.data.shape[-2:])
        idxf = idx.reshape((-1, idx.shape[-1]))
        rows = np.arange(flat.shape[0])[:, None]
        np.add.at(flat, (rows, idxf), vf)
    out = Tensor._wrap(full, _needs_grad(values))

    def backward_fn(g):
        if not values.requires_grad:
            return
        if values.data.ndim == 2:
            _accumulate(values, g[idx])
        else:
            _accumulate(values, np.take_along_axis(g, idx[..., None], axis=-2))

    _record(out, (values,), backward_fn)
    return out


def embedding(table, ids):
    """Row lookup (V, D)[ids] -> ids.shape + (D,), differentiable in the table."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    out = Tensor._wrap(table.data[ids], _needs_grad(table))

    def backward_fn(g):
        if not table.requires_grad:
            return
        full = np.zeros_like(table.data)
        np.add.at(full, ids.ravel(), g.reshape(-1, table.data.shape[-1]))
        _accumulate(table, full)

    _record(out, (table,), backward_fn)
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def _gelu_grad(x):
    # derivative of the tanh-approximation gelu; module-level so the verify
    # suite's mutation hooks can reach it
    x2 = x * x
    u = _GELU_C * (x + 0.044715 * x * x2)
    t = np.tanh(u)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * 0.044715 * x2)


def gelu(a):
    a = _as_tensor(a)
    x = a.data
    u = _GELU_C * (x + 0.044715 * (x * x * x))
    out = Tensor._wrap(0.5 * x * (1.0 + np.tanh(u)), _needs_grad(a))

    def backward_fn(g):
        _accumulate(a, g * _gelu_grad(a.data))

    _record(out, (a,), backward_fn)
    return out


def add_where(a, addend, keep):
    """a + addend where `keep`, untouched rows kept bitwise identical.

    `addend` and `keep` are plain arrays (no gradient path); d/da is exactly 1
    on both branches. This is the per-image all-or-nothing positional table add.
    """
    a = _as_tensor(a)
    addend = np.asarray(addend)
    keep = np.asarray(keep, dtype=bool)
    out = Tensor._wrap(np.where(keep, a.data + addend, a.data), _needs_grad(a))

    def backward_fn(g):
        _accumulate(a, g)

    _record(out, (a,), backward_fn)
    return out


def apply_mask(a, mask):
    """Dropout-style masking with an externally supplied constant mask."""
    return mul(a, _const(np.asarray(mask)))


# ---------------------------------------------------------------------------
# composites


def softmax(a, axis=-1):
    """Numerically stabilized softmax along `axis` (max subtraction)."""
    a = _as_tensor(a)
    m = _const(np.max(a.data, axis=axis, keepdims=True))
    z = texp(sub(a, m))
    return div(z, tsum(z, axis=axis, keepdims=True))


def log_softmax(a, axis=-1):
    a = _as_tensor(a)
    m = _const(np.max(a.data, axis=axis, keepdims=True))
    shifted = sub(a, m)
    return sub(shifted, tlog(tsum(texp(shifted), axis=axis, keepdims=True)))


def l2_normalize(a, axis=-1, eps=1e-12):
    """Scale slices along `axis` to unit Euclidean norm."""
    a = _as_tensor(a)
    sq = tsum(mul(a, a), axis=axis, keepdims=True)
    min_norm = float(np.sqrt(np.min(sq.data)))
    if min_norm <= eps:
        raise DegenerateNormError(f"slice norm {min_norm:.3e} at or below epsilon {eps:.0e}")
    return div(a, power(sq, 0.5))


def layer_norm(a, scale, shift, eps=1e-5):
    """Per-token normalization over the last axis with learnable scale/shift."""
    a = _as_tensor(a)
    mu = mean(a, axis=-1, keepdims=True)
    centered = sub(a, mu)
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    inv = power(add(var, eps), -0.5)
    return add(mul(mul(centered, inv), scale), shift)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, wrt, eps=1e-3):
    """Max relative error between backward gradients and central differences.

    f is re-evaluated with `wrt` tensors promoted to float64 for the oracle;
    returns max over coordinates of |analytic - central| / max(1, |central|).
    eps is snapped to the nearest power of two so perturbations of float32
    leaves are exactly representable.
    """
    if not (1e-4 <= eps <= 1e-2):
        raise ContractError(f"eps {eps} outside [1e-4, 1e-2]")
    eps = 2.0 ** round(math.log2(eps))
    tensors = [wrt] if isinstance(wrt, Tensor) else list(wrt)
    for t in tensors:
        t.grad = None

    with use_graph(Graph()):
        out = f()
        if not isinstance(out, Tensor) or out.data.size != 1:
            raise ContractError("grad_check target must produce a scalar Tensor")
        out.backward()
    analytic = [np.zeros_like(t.data, dtype=np.float64) if t.grad is None else t.grad.astype(np.float64)
                for t in tensors]

    originals = [t.data for t in tensors]
    for t in tensors:
        t.data = t.data.astype(np.float64)
    worst = 0.0
    try:
        with no_grad():
            for t, ana in zip(tensors, analytic):
                flat = t.data.reshape(-1)
                for i in range(flat.size):
                    x0 = flat[i]
                    flat[i] = x0 + eps
                    fp = f().data.item()
                    flat[i] = x0 - eps
                    fm = f().data.item()
                    flat[i] = x0
                    numeric = (fp - fm) / (2.0 * eps)
                    err = abs(ana.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
                    worst = max(worst, err)
    finally:
        for t, orig in zip(tensors, originals):
            t.data = orig
            t.grad = None
    return worst
