"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a contiguous numpy array.  Operations on tensors that
require gradients record their parents and a backward rule; calling
:func:`backward` on a scalar result replays the recorded graph in reverse
topological order and accumulates gradients into the leaves.
"""
from __future__ import annotations

import contextlib
import logging
from typing import Callable, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

_GRAD_ENABLED = True
_DEBUG = False


def set_debug(flag: bool) -> None:
    """Check every forward result for NaN/Inf when ``flag`` is set."""
    global _DEBUG
    _DEBUG = bool(flag)


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    # ascontiguousarray would promote 0-d scalars to shape (1,)
    return np.asarray(arr, order="C")


class Tensor:
    """N-dimensional value with optional gradient tracking."""

    __array_priority__ = 1000
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_float_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self) -> Tensor:
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False) -> Tensor:
        return mean(self, axis, keepdims)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Wrap ``data`` and record the backward rule when any parent tracks gradients.

    ``backward`` maps the output gradient to a tuple with one entry (array or
    None) per parent.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    if _DEBUG and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(p.data)) for p in parents):
            raise FloatingPointError(f"non-finite output from {op} on finite inputs")
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


# -- graph replay ---------------------------------------------------------
class GradTape:
    """Recorded operations reachable from a root, in topological order.

    ``nodes[i]`` never depends on ``nodes[j]`` for ``j > i``.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        # iterative DFS; deep graphs would blow the recursion limit
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

    def __len__(self) -> int:
        return len(self.nodes)

    def replay(self, seed: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {id(self.root): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise RuntimeError("backward called on a tensor that was not recorded on a tape")
    GradTape(root).replay(np.ones_like(root.data))


# -- elementwise ----------------------------------------------------------
def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return _add_scalar(a, float(b))
    _check_same(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def _add_scalar(a: Tensor, c: float) -> Tensor:
    return _result(a.data + a.data.dtype.type(c), (a,), lambda g: (g,), "add_scalar")


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return _add_scalar(a, -float(b))
    _check_same(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, float(b))
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def elementwise(op_kind: str, a: Tensor, b) -> Tensor:
    """Dispatch one of ``add``, ``sub``, ``mul`` or ``scale``."""
    if op_kind == "add":
        return add(a, b)
    if op_kind == "sub":
        return sub(a, b)
    if op_kind == "mul":
        return mul(a, b)
    if op_kind == "scale":
        return scale(a, float(b))
    raise ValueError(f"unknown elementwise op {op_kind!r}")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _result(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return _result(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),), f"pow{p}")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,), "log")


def broadcast_mul(x: Tensor, m: Tensor) -> Tensor:
    """``x * m`` where ``m`` broadcasts to ``x`` (size-1 axes only, same ndim).

    This is the one broadcasting product in the library; it carries the
    attention gates that rescale feature maps.
    """
    if m.ndim != x.ndim or any(ms not in (1, xs) for ms, xs in zip(m.shape, x.shape)):
        raise ValueError(f"broadcast_mul: {m.shape} does not broadcast to {x.shape}")
    xd, md = x.data, m.data
    axes = tuple(i for i, (ms, xs) in enumerate(zip(m.shape, x.shape)) if ms == 1 and xs != 1)

    def bw(g):
        gm = (g * xd).sum(axis=axes, keepdims=True) if axes else g * xd
        return g * md, gm

    return _result(xd * md, (x, m), bw, "broadcast_mul")


def broadcast_add(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` where ``b`` broadcasts to ``x`` (size-1 axes only, same ndim)."""
    if b.ndim != x.ndim or any(bs not in (1, xs) for bs, xs in zip(b.shape, x.shape)):
        raise ValueError(f"broadcast_add: {b.shape} does not broadcast to {x.shape}")
    axes = tuple(i for i, (bs, xs) in enumerate(zip(b.shape, x.shape)) if bs == 1 and xs != 1)

    def bw(g):
        return g, (g.sum(axis=axes, keepdims=True) if axes else g)

    return _result(x.data + b.data, (x, b), bw, "broadcast_add")


# -- linear algebra / shape -----------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, (a, b), bw, "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return _result(out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),), "transpose")


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    src = a.shape
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _result(out, (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in ax]))
    return scale(tsum(a, axis, keepdims), 1.0 / count)


def index_rows(a: Tensor, idx) -> Tensor:
    """Select along axis 0 (``a[idx]``) with a scatter-add backward."""
    idx = np.asarray(idx)
    src_shape, dtype = a.shape, a.dtype

    def bw(g):
        out = np.zeros(src_shape, dtype=dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _result(a.data[idx], (a,), bw, "index_rows")


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    src_shape, dtype = a.shape, a.dtype

    def bw(g):
        out = np.zeros(src_shape, dtype=dtype)
        out[sl] = g
        return (out,)

    return _result(np.ascontiguousarray(a.data[sl]), (a,), bw, "slice")


def stack_scalars(xs: Iterable[Tensor]) -> Tensor:
    xs = list(xs)
    data = np.array([x.data.reshape(()) for x in xs])
    return _result(data, xs, lambda g: tuple(g[i].reshape(x.shape) for i, x in enumerate(xs)), "stack")


# -- verification ---------------------------------------------------------
def gradcheck(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Largest relative disagreement between backprop and central differences.

    The error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    ``f`` must return a scalar tensor and be deterministic.
    """
    for t in inputs:
        if t.dtype != np.float64:
            logger.warning("gradcheck on %s input; tolerances assume float64", t.dtype)
    first = f(*inputs)
    second = f(*inputs)
    if not np.array_equal(first.data, second.data):
        raise RuntimeError("gradcheck: function is not deterministic across calls")
    saved = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = f(*inputs)
    if out.data.size != 1:
        raise ValueError(f"gradcheck needs a scalar output, got shape {out.shape}")
    backward(out)
    worst = 0.0
    with no_grad():
        for t in inputs:
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = float(f(*inputs).data.reshape(()))
                flat[i] = orig - eps
                lo = float(f(*inputs).data.reshape(()))
                flat[i] = orig
                numeric = (hi - lo) / (2 * eps)
                a = float(analytic.reshape(-1)[i])
                worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    for t, flag in zip(inputs, saved):
        t.requires_grad = flag
        t.grad = None
    return worst
