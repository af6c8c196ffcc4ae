"""Reverse-mode differentiation over numpy arrays.

Every learned component in comhr is built from the operations in this module.
A :class:`Tensor` wraps a float64 array; operations on tensors that require
gradients record their parents and a vector-Jacobian closure, and
:func:`backward` walks the recorded graph in reverse topological order.

Elementwise binary operations follow numpy broadcasting; the gradient of a
broadcast operand is summed back to its own dims.  Operand dims that numpy
cannot broadcast raise :class:`~comhr.errors.ShapeError` naming both dims.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, GradcheckError, NonScalarLossError, ShapeError

_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def kink_recorder():
    """Collect the activation pattern of every non-smooth selection.

    Used by :func:`gradcheck` to detect when a finite-difference probe
    crosses a ReLU kink or flips a discrete choice (e.g. a hypergraph
    neighbour set).
    """
    prev = getattr(_state, "kinks", None)
    rec = []
    _state.kinks = rec
    try:
        yield rec
    finally:
        _state.kinks = prev


def record_kink(pattern):
    rec = getattr(_state, "kinks", None)
    if rec is not None:
        rec.append(np.asarray(pattern).tobytes())


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, *, _parents=(), _backward=None, op="leaf"):
        self.data = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) \
            else data.astype(np.float64, copy=False)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad and op == "leaf" else None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    dims = shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, dims={list(self.shape)}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    # operator sugar
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


class Parameter(Tensor):
    """A named, optionally trainable leaf tensor."""

    __slots__ = ("name", "trainable")

    def __init__(self, name, value, trainable=True):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    def __repr__(self):
        return f"Parameter({self.name!r}, dims={list(self.shape)})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, True, _parents=parents, _backward=backward_fn, op=op)
    return Tensor(data, op=op)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_check(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), bw, "div")


def relu(x):
    """ReLU; the subgradient at exactly 0 is 0."""
    x = as_tensor(x)
    on = x.data > 0
    record_kink(np.packbits(on))

    def bw(g):
        return (g * on,)

    return _make(np.where(on, x.data, 0.0), (x,), bw, "relu")


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)

    def bw(g):
        return (g * out,)

    return _make(out, (x,), bw, "exp")


def log(x):
    x = as_tensor(x)
    if np.any(x.data <= 0):
        bad = float(x.data[x.data <= 0].flat[0])
        raise DomainError(f"log of non-positive value {bad}")

    def bw(g):
        return (g / x.data,)

    return _make(np.log(x.data), (x,), bw, "log")


def where(cond, a, b):
    """Select ``a`` where the constant mask ``cond`` holds, else ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    record_kink(np.packbits(cond))

    def bw(g):
        return _unbroadcast(np.where(cond, g, 0.0), a.shape), _unbroadcast(np.where(cond, 0.0, g), b.shape)

    return _make(np.where(cond, a.data, b.data), (a, b), bw, "where")


# ---------------------------------------------------------------------------
# linear algebra and structure


def matmul(a, b):
    """Matrix product over the last two axes.

    ``a`` is (..., m, k); ``b`` is (k, n) or has the same leading dims as ``a``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or (
        b.ndim > 2 and b.shape[:-2] != a.shape[:-2]
    ):
        raise ShapeError("matmul", a.shape, b.shape)

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        if b.ndim == 2 and gb.ndim > 2:
            gb = gb.reshape(-1, *b.shape).sum(axis=0)
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def cross(a, b):
    """Cross product over a trailing axis of length 3."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.shape[-1] != 3:
        raise ShapeError("cross", a.shape, b.shape)

    def bw(g):
        return np.cross(b.data, g), np.cross(g, a.data)

    return _make(np.cross(a.data, b.data), (a, b), bw, "cross")


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if t.ndim != len(ref) or t.shape[:ax] + t.shape[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise ShapeError("concat", ref, t.shape)
    splits = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(np.concatenate([t.data for t in ts], axis=ax), tuple(ts), bw, "concat")


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise ShapeError("stack", ts[0].shape, t.shape)
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim

    def bw(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))

    return _make(out, tuple(ts), bw, "stack")


def getitem(x, idx):
    x = as_tensor(x)
    out = x.data[idx]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(np.array(out), (x,), bw, "getitem")


def take(x, indices, axis):
    """Gather along ``axis``; repeated indices accumulate gradient."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.intp)
    ax = axis % x.ndim
    idx = (slice(None),) * ax + (indices,)
    return getitem(x, idx)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None

    def bw(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), bw, "reshape")


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    inv = np.argsort(axes)

    def bw(g):
        return (np.transpose(g, inv),)

    return _make(np.transpose(x.data, axes), (x,), bw, "transpose")


# ---------------------------------------------------------------------------
# reductions


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bw, "sum")


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis, keepdims), 1.0 / n)


def masked_mean(x, weights, axis):
    """Weighted mean of ``x`` along ``axis`` with constant nonnegative weights.

    Slices whose weights sum to zero produce 0.
    """
    x = as_tensor(x)
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), x.shape)
    total = w.sum(axis=axis, keepdims=True)
    safe = np.where(total > 0, total, 1.0)
    coef = np.where(total > 0, w / safe, 0.0)

    def bw(g):
        return (np.expand_dims(g, axis) * coef,)

    return _make(np.sum(coef * x.data, axis=axis), (x,), bw, "masked_mean")


def mse(a, b):
    """Mean of squared elementwise differences (a scalar)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("mse", a.shape, b.shape)
    d = a.data - b.data
    n = max(d.size, 1)

    def bw(g):
        return 2.0 * g * d / n, -2.0 * g * d / n

    return _make(np.array(np.sum(d * d) / n), (a, b), bw, "mse")


# ---------------------------------------------------------------------------
# normalisation and similarity


def l2normalize(x, axis=-1, eps=1e-12):
    x = as_tensor(x)
    norm = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    big = norm > eps
    record_kink(big)
    denom = np.where(big, norm, eps)
    y = x.data / denom

    def bw(g):
        # a (near-)zero vector has no direction; it is treated as a constant
        radial = np.sum(g * y, axis=axis, keepdims=True)
        return (np.where(big, (g - y * radial) / denom, 0.0),)

    return _make(y, (x,), bw, "l2normalize")


def cosine(a, b, axis=-1):
    """Cosine similarity along ``axis``; zero vectors give 0."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("cosine", a.shape, b.shape)
    return sum_(l2normalize(a, axis) * l2normalize(b, axis), axis=axis)


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _make(y, (x,), bw, "softmax")


def layernorm(x, eps=1e-5):
    """Normalise the last axis to zero mean and unit variance (no affine)."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _make(y, (x,), bw, "layernorm")


_OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "relu": relu,
    "concat": lambda *ts, axis=-1: concat(ts, axis),
    "stack": lambda *ts, axis=0: stack(ts, axis),
    "l2normalize": l2normalize,
    "cosine": cosine,
    "softmax": softmax,
    "masked_mean": masked_mean,
    "mean": mean,
    "sum": sum_,
    "mse": mse,
    "layernorm": layernorm,
    "exp": exp,
    "log": log,
    "cross": cross,
    "where": where,
    "reshape": reshape,
    "transpose": transpose,
    "take": take,
}

OP_KINDS = tuple(_OPS)


def forward_op(kind, *inputs, **kwargs):
    """Apply the operation named ``kind``; see ``OP_KINDS``."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# reverse pass


def _topo_order(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(node) into ``.grad`` of every tracked node.

    Returns ``{name: grad}`` for the Parameters reached from ``loss``.
    Parameters that the loss does not depend on keep their (zero) gradient.
    """
    if not isinstance(loss, Tensor) or loss.ndim != 0:
        dims = list(loss.shape) if isinstance(loss, Tensor) else type(loss).__name__
        raise NonScalarLossError(f"backward needs a scalar loss, got dims {dims}")
    if not loss.requires_grad:
        return {}
    order = _topo_order(loss)
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    found = {}
    for node in reversed(order):
        if isinstance(node, Parameter):
            found[node.name] = node.grad
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64).reshape(parent.shape)
            else:
                parent.grad = parent.grad + g
    return found


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradcheckReport:
    max_rel_error: dict = field(default_factory=dict)
    checked: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def worst(self):
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self):
        return self.worst < self.tol

    def __str__(self):
        lines = [f"gradcheck tol={self.tol:g} {'PASS' if self.passed else 'FAIL'}"]
        for name, err in self.max_rel_error.items():
            lines.append(
                f"  {name}: max rel err {err:.3e} "
                f"({self.checked[name]} checked, {self.skipped[name]} skipped at kinks)"
            )
        return "\n".join(lines)


def _param_name(p, i):
    return getattr(p, "name", None) or f"param{i}"


def relative_error(a, n):
    return abs(a - n) / max(1e-8, abs(a) + abs(n))


def gradcheck(fn, params, h=1e-3, tol=1e-4):
    """Compare analytic gradients of ``fn(*params)`` with central differences.

    Elements whose probes at x +/- h change any recorded kink pattern
    (ReLU activity, discrete selections) are skipped and counted.
    """
    params = list(params)
    for p in params:
        if not p.requires_grad:
            raise GradcheckError(f"{_param_name(p, 0)} does not require grad")
        p.zero_grad()
    with kink_recorder() as base_sig:
        loss = fn(*params)
    if not np.isfinite(loss.data).all():
        raise GradcheckError("non-finite function value at the unperturbed point")
    backward(loss)
    analytic = [p.grad.copy() for p in params]

    def probe(p, idx, value, name):
        p.data[idx] = value
        with no_grad(), kink_recorder() as sig:
            out = float(fn(*params).data)
        if not np.isfinite(out):
            raise GradcheckError(
                f"non-finite output when perturbing {name}{list(idx)} to {value!r}", name, idx
            )
        return out, sig

    report = GradcheckReport(tol=tol)
    for i, p in enumerate(params):
        name = _param_name(p, i)
        worst, n_ok, n_skip = 0.0, 0, 0
        for idx in np.ndindex(p.shape):
            orig = p.data[idx]
            try:
                fp, sp = probe(p, idx, orig + h, name)
                fm, sm = probe(p, idx, orig - h, name)
            finally:
                p.data[idx] = orig
            if sp != base_sig or sm != base_sig:
                n_skip += 1
                continue
            n_ok += 1
            worst = max(worst, relative_error(analytic[i][idx], (fp - fm) / (2 * h)))
        report.max_rel_error[name] = worst
        report.checked[name] = n_ok
        report.skipped[name] = n_skip
    return report
