"""Reverse-mode automatic differentiation over dense float64 tensors.

The engine is deliberately small: a Tensor wraps a numpy float64 array,
each differentiable operation attaches a GraphNode recording its parents
and a backward rule, and ``backward`` walks the graph in reverse
topological order accumulating gradients.

Broadcasting is restricted on purpose. Binary elementwise ops accept:
equal shapes, a scalar on either side, or a strict trailing-suffix
broadcast (e.g. ``[B, F] + [F]`` bias adds). Any other shape mixing must
go through ``broadcast_to`` explicitly, which keeps shape bugs loud.
"""

import math
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, NumericDomainError, NumericError, ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class GraphNode:
    """Records how a tensor was produced.

    ``rule`` maps the upstream gradient (an ndarray shaped like the
    node's output) to a tuple of gradients aligned with ``parents``;
    entries may be None for parents that do not require gradients.
    Values the rule needs are captured in its closure.
    """

    __slots__ = ("op", "parents", "rule")

    def __init__(self, op, parents, rule):
        self.op = op
        self.parents = parents
        self.rule = rule


class Tensor:
    """Dense float64 array with an optional gradient and graph linkage."""

    __slots__ = ("data", "grad", "node", "requires_grad")

    def __init__(self, data, requires_grad=False, node=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.node = node
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, trace=None):
        backward(self, trace=trace)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; scalars are lifted to constant tensors.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return mul(self, _lift(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.float64(x))


def _make(data, op, parents, rule):
    """Wrap an op result, attaching a node only when gradients can flow."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, node=GraphNode(op, tuple(parents), rule))
    return Tensor(data)


# ---------------------------------------------------------------------------
# shape plumbing

def _ew_check(op, a, b):
    """Validate the restricted elementwise broadcast policy."""
    sa, sb = a.data.shape, b.data.shape
    if sa == sb or a.data.size == 1 or b.data.size == 1:
        return
    # trailing-suffix broadcast: the smaller shape must equal the larger's tail
    small, large = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(small) < len(large) and large[len(large) - len(small):] == small:
        return
    raise ShapeError(op, sa, sb)


def _unbroadcast(grad, shape):
    """Sum a gradient down to the shape of the operand it belongs to."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise binary primitives

def add(a, b):
    _ew_check("add", a, b)
    out = a.data + b.data

    def rule(g):
        return (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g, b.data.shape) if b.requires_grad else None)

    return _make(out, "add", (a, b), rule)


def sub(a, b):
    _ew_check("sub", a, b)
    out = a.data - b.data

    def rule(g):
        return (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.data.shape) if b.requires_grad else None)

    return _make(out, "sub", (a, b), rule)


def mul(a, b):
    _ew_check("mul", a, b)
    out = a.data * b.data

    def rule(g):
        return (_unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None)

    return _make(out, "mul", (a, b), rule)


def div(a, b):
    _ew_check("div", a, b)
    if np.any(b.data == 0.0):
        raise NumericDomainError("div: divisor contains zero")
    out = a.data / b.data

    def rule(g):
        return (_unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None,
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
                if b.requires_grad else None)

    return _make(out, "div", (a, b), rule)


def scalar_mul(a, c: float):
    return mul(a, _lift(float(c)))


# ---------------------------------------------------------------------------
# matmul

def _blas_ready(arr):
    """BLAS needs a unit stride somewhere; general strided views (e.g. a
    transposed kernel-tap slice) fall into a slow numpy path otherwise."""
    if arr.flags.c_contiguous or arr.flags.f_contiguous:
        return arr
    return np.ascontiguousarray(arr)


def matmul(a, b):
    sa, sb = a.data.shape, b.data.shape
    ok = (len(sa), len(sb)) in {(2, 2), (2, 3), (3, 2), (3, 3)}
    if ok and len(sa) == 3 and len(sb) == 3 and sa[0] != sb[0]:
        ok = False
    if not ok or sa[-1] != sb[-2]:
        raise ShapeError("matmul", sa, sb)

    if len(sa) == 3 and len(sb) == 2:
        # one large 2-D GEMM instead of a stack of tiny ones
        a2 = np.ascontiguousarray(a.data).reshape(-1, sa[2])
        b2 = _blas_ready(b.data)
        out = (a2 @ b2).reshape(sa[0], sa[1], sb[1])

        def rule(g):
            g2 = np.ascontiguousarray(g).reshape(-1, sb[1])
            ga = (g2 @ b2.T).reshape(sa) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _make(out, "matmul", (a, b), rule)

    a2 = _blas_ready(a.data)
    b2 = _blas_ready(b.data)
    out = np.matmul(a2, b2)

    def rule(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b2, -1, -2)), sa)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a2, -1, -2), g), sb)
        return ga, gb

    return _make(out, "matmul", (a, b), rule)


# ---------------------------------------------------------------------------
# elementwise unary primitives

def relu(a):
    out = np.maximum(a.data, 0.0)

    def rule(g):
        return (g * (a.data > 0.0),)

    return _make(out, "relu", (a,), rule)


def _sigmoid_values(x):
    # stable for large |x|: exp argument is always <= 0
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a):
    out = _sigmoid_values(a.data)

    def rule(g):
        return (g * out * (1.0 - out),)

    return _make(out, "sigmoid", (a,), rule)


def tanh(a):
    out = np.tanh(a.data)

    def rule(g):
        return (g * (1.0 - out * out),)

    return _make(out, "tanh", (a,), rule)


def exp(a):
    out = np.exp(a.data)

    def rule(g):
        return (g * out,)

    return _make(out, "exp", (a,), rule)


def log(a):
    if np.any(a.data <= 0.0):
        raise NumericDomainError("log: argument must be strictly positive")
    out = np.log(a.data)

    def rule(g):
        return (g / a.data,)

    return _make(out, "log", (a,), rule)


def square(a):
    out = a.data * a.data

    def rule(g):
        return (2.0 * g * a.data,)

    return _make(out, "square", (a,), rule)


def sqrt(a):
    if np.any(a.data <= 0.0):
        raise NumericDomainError("sqrt: argument must be strictly positive")
    out = np.sqrt(a.data)

    def rule(g):
        return (g * (0.5 / out),)

    return _make(out, "sqrt", (a,), rule)


def softplus(a):
    out = np.logaddexp(0.0, a.data)

    def rule(g):
        return (g * _sigmoid_values(a.data),)

    return _make(out, "softplus", (a,), rule)


def clip(a, lo: float, hi: float):
    out = np.clip(a.data, lo, hi)

    def rule(g):
        return (g * ((a.data > lo) & (a.data < hi)),)

    return _make(out, "clip", (a,), rule)


# ---------------------------------------------------------------------------
# reductions

def _reduce_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(ax % ndim for ax in axis)


def tensor_sum(a, axis=None, keepdims=False):
    axes = _reduce_axes(axis, a.data.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def rule(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axes) if axes else gg
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _make(out, "sum", (a,), rule)


def mean(a, axis=None, keepdims=False):
    axes = _reduce_axes(axis, a.data.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def rule(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axes) if axes else gg
        return (np.broadcast_to(gg, a.data.shape) / count,)

    return _make(out, "mean", (a,), rule)


# ---------------------------------------------------------------------------
# structural primitives

def concat(tensors, axis: int):
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat: empty tensor list")
    nd = tensors[0].data.ndim
    axis = axis % nd
    base = list(tensors[0].data.shape)
    for t in tensors[1:]:
        s = list(t.data.shape)
        if len(s) != nd or s[:axis] + s[axis + 1:] != base[:axis] + base[axis + 1:]:
            raise ShapeError("concat", tensors[0].data.shape, t.data.shape)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def rule(g):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(pieces, tensors))

    return _make(out, "concat", tuple(tensors), rule)


def slice_axis(a, axis: int, start: int, stop: int):
    nd = a.data.ndim
    axis = axis % nd
    if not (0 <= start < stop <= a.data.shape[axis]):
        raise ShapeError("slice", a.data.shape, (start, stop))
    index = tuple(slice(None) if i != axis else slice(start, stop) for i in range(nd))
    out = a.data[index]

    def rule(g):
        full = np.zeros(a.data.shape)
        full[index] = g
        return (full,)

    return _make(out, "slice", (a,), rule)


def reshape(a, shape):
    shape = tuple(shape)
    if math.prod(shape) != a.data.size:
        raise ShapeError("reshape", a.data.shape, shape)
    out = a.data.reshape(shape)

    def rule(g):
        return (g.reshape(a.data.shape),)

    return _make(out, "reshape", (a,), rule)


def transpose(a, axis0: int, axis1: int):
    out = np.swapaxes(a.data, axis0, axis1)

    def rule(g):
        return (np.swapaxes(g, axis0, axis1),)

    return _make(out, "transpose", (a,), rule)


def pad_left_time(a, amount: int, axis: int = -1):
    """Zero-pad the time axis on the left; used by causal convolution."""
    if amount < 0:
        raise ContractError("pad_left_time: negative padding")
    axis = axis % a.data.ndim
    width = [(amount, 0) if i == axis else (0, 0) for i in range(a.data.ndim)]
    out = np.pad(a.data, width)
    index = tuple(slice(amount, None) if i == axis else slice(None)
                  for i in range(a.data.ndim))

    def rule(g):
        return (g[index],)

    return _make(out, "pad_left_time", (a,), rule)


def broadcast_to(a, shape):
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError("broadcast_to", a.data.shape, shape) from None

    def rule(g):
        return (_unbroadcast(g, a.data.shape),)

    return _make(out, "broadcast_to", (a,), rule)


def grad_reverse(a):
    """Identity in the forward pass; negates the gradient in the backward pass."""
    out = a.data.copy()

    def rule(g):
        return (-g,)

    return _make(out, "grad_reverse", (a,), rule)


def lstm_cell(z, c_prev):
    """Fused LSTM cell: z is the [B, 4h] gate pre-activation block in
    (input, forget, cell, output) order, c_prev the previous cell state.

    Returns (h, c). Composing this from the scalar primitives costs ~20
    graph nodes per timestep; the fused rule keeps sequence models
    affordable without changing the math (finite-difference checked like
    every other primitive).
    """
    if z.data.ndim != 2 or z.data.shape[1] != 4 * c_prev.data.shape[1] \
            or z.data.shape[0] != c_prev.data.shape[0]:
        raise ShapeError("lstm_cell", z.data.shape, c_prev.data.shape)
    nh = c_prev.data.shape[1]
    gi = _sigmoid_values(z.data[:, 0:nh])
    gf = _sigmoid_values(z.data[:, nh:2 * nh])
    gc = np.tanh(z.data[:, 2 * nh:3 * nh])
    go = _sigmoid_values(z.data[:, 3 * nh:4 * nh])
    c = gf * c_prev.data + gi * gc
    tc = np.tanh(c)
    h = go * tc

    def h_rule(g):
        gz = gc_prev = None
        dc = g * go * (1.0 - tc * tc)
        if z.requires_grad:
            gz = np.concatenate([
                dc * gc * gi * (1.0 - gi),
                dc * c_prev.data * gf * (1.0 - gf),
                dc * gi * (1.0 - gc * gc),
                g * tc * go * (1.0 - go),
            ], axis=1)
        if c_prev.requires_grad:
            gc_prev = dc * gf
        return gz, gc_prev

    def c_rule(g):
        gz = gc_prev = None
        if z.requires_grad:
            zero = np.zeros_like(g)
            gz = np.concatenate([
                g * gc * gi * (1.0 - gi),
                g * c_prev.data * gf * (1.0 - gf),
                g * gi * (1.0 - gc * gc),
                zero,
            ], axis=1)
        if c_prev.requires_grad:
            gc_prev = g * gf
        return gz, gc_prev

    h_t = _make(h, "lstm_cell_h", (z, c_prev), h_rule)
    c_t = _make(c, "lstm_cell_c", (z, c_prev), c_rule)
    return h_t, c_t


# ---------------------------------------------------------------------------
# backward pass

def backward(root: Tensor, trace=None):
    """Populate gradients of everything reachable from a scalar root.

    Gradients sum over multiple paths and accumulate across repeated
    calls; use ``zero_grads`` (or ``sgd_step``, which zeroes) between
    steps. ``trace``, if given, collects tensors in processing order for
    the DAG-ordering tests.
    """
    if root.data.size != 1:
        raise ContractError(f"backward: root must be scalar, got shape {root.shape}")

    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if id(p) not in visited and (p.requires_grad or p.node is not None):
                    stack.append((p, False))

    flowing = {id(root): np.ones_like(root.data)}
    for t in reversed(order):
        g = flowing.pop(id(t), None)
        if g is None:
            continue
        if trace is not None:
            trace.append(t)
        if t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g
        if t.node is None:
            continue
        parent_grads = t.node.rule(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in flowing:
                flowing[key] = flowing[key] + pg
            else:
                flowing[key] = pg


def zero_grads(params):
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# gradient-check oracle

def finite_difference_check(loss_fn, params, step: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must be a deterministic zero-argument callable returning a
    scalar Tensor built from ``params``. Relative error per entry is
    ``|analytic - numeric| / max(1e-12, |analytic| + |numeric|)``.
    """
    if step <= 0:
        raise ContractError("finite_difference_check: step must be positive")
    loss = loss_fn()
    if loss.data.size != 1:
        raise ContractError("finite_difference_check: loss must be scalar")
    if not np.isfinite(loss.data).all():
        raise NumericError("finite_difference_check: non-finite loss")
    zero_grads(params)
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    zero_grads(params)

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = ana.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            with no_grad():
                flat[i] = saved + step
                lo_hi = loss_fn().item()
                flat[i] = saved - step
                lo_lo = loss_fn().item()
            flat[i] = saved
            if not (math.isfinite(lo_hi) and math.isfinite(lo_lo)):
                raise NumericError("finite_difference_check: non-finite perturbed loss")
            numeric = (lo_hi - lo_lo) / (2.0 * step)
            err = abs(aflat[i] - numeric) / max(1e-12, abs(aflat[i]) + abs(numeric))
            worst = max(worst, err)
    return worst
