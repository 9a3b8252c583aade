"""Dense tensors with tape-based reverse-mode differentiation.

Operations are recorded only while a :class:`Tape` is active and at least one
operand requires a gradient, so inference code pays no bookkeeping cost::

    with Tape() as tape:
        loss = tensor.sum(tensor.mul(x, x))
    tape.backward(loss)

Gradients accumulate into ``Parameter.grad``; callers zero them explicitly.
Broadcasting is limited to scalars plus a few named row/position operations
(:func:`bias_add`, :func:`expand_add`) that the recurrent layers need.
"""

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError

DTYPE = np.float32

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def _default_dtype():
    return getattr(_local, "dtype", DTYPE)


@contextmanager
def precision(dtype):
    """Temporarily change the dtype used when constructing tensors."""
    old = _default_dtype()
    _local.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _local.dtype = old


class Tensor:
    """An n-dimensional float array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=_default_dtype())
        self.requires_grad = requires_grad
        self.grad = None
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A named trainable tensor with a gradient buffer of the same shape."""

    __slots__ = ("name",)

    def __init__(self, name, data):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


class Tape:
    """Ordered record of the operations executed during one forward pass."""

    def __init__(self):
        self.nodes = []
        self.finished = False

    def __enter__(self):
        if self.finished:
            raise ContractError("a tape records exactly one forward pass")
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def backward(self, loss):
        if self.finished:
            raise ContractError("backward already ran on this tape")
        if loss.data.size != 1 or loss.ndim > 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self:
            raise ContractError("loss was not recorded on this tape")
        self.finished = True
        grads = {id(loss): np.ones_like(loss.data)}
        for out, inputs, fn in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for t, tg in zip(inputs, fn(g)):
                if tg is None or not t.requires_grad:
                    continue
                if t.tape is self:
                    prev = grads.get(id(t))
                    grads[id(t)] = tg if prev is None else prev + tg
                elif t.tape is None:
                    if t.grad is None:
                        t.grad = np.zeros_like(t.data)
                    t.grad += tg
        self.nodes = []


def backward(loss):
    """Populate gradients of every leaf reachable from ``loss``."""
    if loss.tape is None:
        raise ContractError("loss was not recorded on a live tape")
    loss.tape.backward(loss)


def _result(data, inputs, fn):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.tape = None
    out.requires_grad = False
    stack = getattr(_local, "tapes", None)
    if stack:
        for t in inputs:
            if t.requires_grad:
                tape = stack[-1]
                out.requires_grad = True
                out.tape = tape
                tape.nodes.append((out, inputs, fn))
                break
    return out


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _is_scalar(x):
    return isinstance(x, (int, float, np.floating, np.integer)) or (
        isinstance(x, Tensor) and x.ndim == 0
    )


def _check_same(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """Matrix product of ``a`` (..., k) with ``b`` (k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    ad, bd = a.data, b.data

    def grad(g):
        k, n = bd.shape
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.reshape(-1, k).T @ g.reshape(-1, n) if b.requires_grad else None
        return ga, gb

    return _result(ad @ bd, (a, b), grad)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    if _is_scalar(b) and not isinstance(b, Tensor):
        a = as_tensor(a)
        return _result(a.data + b, (a,), lambda g: (g,))
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim == 0 and a.ndim > 0:
        return _result(a.data + b.data, (a, b), lambda g: (g, g.sum()))
    _check_same("add", a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    if _is_scalar(b) and not isinstance(b, Tensor):
        a = as_tensor(a)
        return _result(a.data - b, (a,), lambda g: (g,))
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim == 0 and a.ndim > 0:
        return _result(a.data - b.data, (a, b), lambda g: (g, -g.sum()))
    _check_same("sub", a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    if _is_scalar(b) and not isinstance(b, Tensor):
        return scale(a, b)
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if b.ndim == 0 and a.ndim > 0:
        return _result(ad * bd, (a, b), lambda g: (g * bd, (g * ad).sum()))
    _check_same("mul", a, b)
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a, s):
    a = as_tensor(a)
    s = float(s)
    return _result(a.data * a.data.dtype.type(s), (a,), lambda g: (g * s,))


def sigmoid(a):
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,))


def log(a):
    a = as_tensor(a)
    x = a.data
    return _result(np.log(x), (a,), lambda g: (g / x,))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "scale": scale}
_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "exp": exp, "log": log}


def elementwise(kind, a, b=None):
    """Dispatch an elementwise operation by name."""
    if kind in _UNARY:
        return _UNARY[kind](a)
    if kind not in _ELEMENTWISE:
        raise ContractError(f"unknown elementwise kind {kind!r}")
    if b is None:
        raise ContractError(f"{kind} needs a second operand")
    return _ELEMENTWISE[kind](a, b)


def where(keep, a, b):
    """Select ``a`` where the constant boolean array ``keep`` holds, else ``b``.

    ``keep`` may be broadcastable to the operand shape (e.g. ``(B, 1)``).
    """
    a, b = as_tensor(a), as_tensor(b)
    _check_same("where", a, b)
    keep = np.asarray(keep, dtype=bool)
    zero = a.data.dtype.type(0)
    return _result(
        np.where(keep, a.data, b.data),
        (a, b),
        lambda g: (np.where(keep, g, zero), np.where(keep, zero, g)),
    )


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    try:
        y = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"reshape: cannot view {old} as {shape}") from e
    return _result(y, (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise DimensionError(
                f"concat: shapes {[u.shape for u in tensors]} disagree off axis {axis}"
            )
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def grad(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), grad)


def narrow(a, start, stop, axis=-1):
    """Slice ``a[start:stop]`` along ``axis``."""
    a = as_tensor(a)
    ax = axis % a.ndim
    idx = [slice(None)] * a.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)
    shape, dtype = a.shape, a.data.dtype

    def grad(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return _result(a.data[idx], (a,), grad)


def index(a, i):
    """Select ``a[i]`` along the leading axis."""
    a = as_tensor(a)
    shape, dtype = a.shape, a.data.dtype

    def grad(g):
        full = np.zeros(shape, dtype=dtype)
        full[i] = g
        return (full,)

    return _result(a.data[i], (a,), grad)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise DimensionError(f"stack: shapes {[u.shape for u in tensors]} differ")
    n = len(tensors)

    def grad(g):
        return tuple(np.squeeze(p, axis=axis) for p in np.split(g, n, axis=axis))

    return _result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), grad)


def take(table, ids):
    """Gather rows of a 2-D ``table`` by an integer index array."""
    table = as_tensor(table)
    if table.ndim != 2:
        raise DimensionError(f"take: table must be 2-D, got {table.shape}")
    ids = np.asarray(ids, dtype=np.int64)
    shape, dtype = table.shape, table.data.dtype

    def grad(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _result(table.data[ids], (table,), grad)


# ---------------------------------------------------------------------------
# reductions and normalisation


def sum(a):
    a = as_tensor(a)
    shape = a.shape
    return _result(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a):
    a = as_tensor(a)
    shape, n = a.shape, a.data.size
    return _result(
        a.data.mean(), (a,), lambda g: (np.broadcast_to(g / n, shape).astype(a.data.dtype),)
    )


def bias_add(x, b):
    """Add vector ``b`` (n,) to every row of ``x`` (..., n)."""
    x, b = as_tensor(x), as_tensor(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"bias_add: shapes {x.shape} and {b.shape} are incompatible")
    n = b.shape[0]
    return _result(x.data + b.data, (x, b), lambda g: (g, g.reshape(-1, n).sum(axis=0)))


def expand_add(p, q):
    """Add ``q`` (B, D) to every position of ``p`` (B, S, D)."""
    p, q = as_tensor(p), as_tensor(q)
    if p.ndim != 3 or q.ndim != 2 or p.shape[0] != q.shape[0] or p.shape[2] != q.shape[1]:
        raise DimensionError(f"expand_add: shapes {p.shape} and {q.shape} are incompatible")
    return _result(p.data + q.data[:, None, :], (p, q), lambda g: (g, g.sum(axis=1)))


def weighted_sum(w, a):
    """Per-row convex combination: ``w`` (B, S) times ``a`` (B, S, D) -> (B, D)."""
    w, a = as_tensor(w), as_tensor(a)
    if w.ndim != 2 or a.ndim != 3 or w.shape != a.shape[:2]:
        raise DimensionError(f"weighted_sum: shapes {w.shape} and {a.shape} are incompatible")
    wd, ad = w.data, a.data

    def grad(g):
        gw = np.einsum("bd,bsd->bs", g, ad) if w.requires_grad else None
        ga = wd[:, :, None] * g[:, None, :] if a.requires_grad else None
        return gw, ga

    return _result(np.einsum("bs,bsd->bd", wd, ad), (w, a), grad)


def softmax(x, axis=-1, mask=None):
    """Max-stabilised softmax; entries where ``mask`` is False get weight 0."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[axis] < 1:
        raise DimensionError(f"softmax: empty axis in shape {x.shape}")
    z = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), grad)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def grad(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _result(y, (x,), grad)


def layer_norm(x, gain, bias, epsilon=1e-5):
    """Standardise each vector along the last axis, then scale and shift.

    ``out = (x - mean) / sqrt(var + epsilon) * gain + bias``
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match {x.shape}"
        )
    if epsilon <= 0:
        raise ContractError("layer_norm epsilon must be positive")
    dt = x.data.dtype
    # statistics in float64: a float32 mean of a constant vector is off by
    # ~1 ulp, which 1/sqrt(epsilon) would amplify to ~1e-4
    xd = x.data.astype(np.float64)
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + epsilon)
    xhat = xc * inv
    inv, xhat = inv.astype(dt), xhat.astype(dt)
    gd = gain.data

    def grad(g):
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (
                gh
                - gh.mean(axis=-1, keepdims=True)
                - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
        gg = (g * xhat).reshape(-1, d).sum(axis=0) if gain.requires_grad else None
        gb = g.reshape(-1, d).sum(axis=0) if bias.requires_grad else None
        return gx, gg, gb

    return _result(xhat * gd + bias.data, (x, gain, bias), grad)


def cross_entropy(logits, targets, weights=None):
    """Weighted mean negative log-likelihood of integer ``targets`` (N,) under ``logits`` (N, V)."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy: logits must be 2-D, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    n = logits.shape[0]
    if targets.shape != (n,):
        raise DimensionError(f"cross_entropy: targets {targets.shape} vs logits {logits.shape}")
    dtype = logits.data.dtype
    w = np.ones(n, dtype=dtype) if weights is None else np.asarray(weights, dtype=dtype)
    total = w.sum()
    if total <= 0:
        raise ContractError("cross_entropy: no target tokens carry weight")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    se = e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    nll = np.log(se[:, 0]) - z[rows, targets]
    loss = np.asarray((w * nll).sum() / total, dtype=dtype)

    def grad(g):
        p = e / se
        p[rows, targets] -= 1.0
        return (p * (w / total * g)[:, None],)

    return _result(loss, (logits,), grad)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_parameter: dict = field(default_factory=dict)
    worst: str = ""

    def ok(self, tol=1e-3):
        return self.max_rel_error <= tol


def _rel_error(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(f, params, eps=1e-4, dtype=np.float64):
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` takes no arguments and returns a scalar :class:`Tensor`; it must be
    deterministic. Parameter values are evaluated in ``dtype`` for the duration
    of the check and restored afterwards.
    """
    params = list(params)
    saved = [(p.data, p.grad) for p in params]
    try:
        with precision(dtype):
            for p in params:
                p.data = p.data.astype(dtype)
                p.grad = np.zeros_like(p.data)
            first, second = float(f().data), float(f().data)
            if first != second:
                raise ContractError("grad_check: f is not deterministic (dropout active?)")
            with Tape() as tape:
                loss = f()
            tape.backward(loss)
            report = GradCheckReport(0.0)
            for p in params:
                worst = 0.0
                flat = p.data.reshape(-1)
                analytic = p.grad.reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + eps
                    up = float(f().data)
                    flat[i] = orig - eps
                    down = float(f().data)
                    flat[i] = orig
                    numeric = (up - down) / (2 * eps)
                    err = _rel_error(float(analytic[i]), numeric)
                    if not math.isfinite(err):
                        err = math.inf
                    worst = max(worst, err)
                name = getattr(p, "name", repr(p))
                report.per_parameter[name] = worst
                if worst >= report.max_rel_error:
                    report.max_rel_error = worst
                    report.worst = name
            return report
    finally:
        for p, (data, g) in zip(params, saved):
            p.data, p.grad = data, g
