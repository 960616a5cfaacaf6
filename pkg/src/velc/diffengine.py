"""Small reverse-mode automatic differentiation engine over float64 arrays.

Every trainable computation in the package is expressed with the functions in
this module.  A :class:`Tensor` produced by an operation doubles as a tape node:
it keeps references to its inputs and a closure mapping the upstream gradient
to gradients for each input.  :func:`backward` walks that graph once in reverse
topological order and returns a :class:`GradientMap` over the leaf parameters.

Broadcasting is deliberately explicit (:func:`broadcast_to`); binary
elementwise ops insist on identical shapes.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GradientMap",
    "ShapeError",
    "DomainError",
    "ContractError",
    "tensor",
    "parameter",
    "constant",
    "no_grad",
    "matmul",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "square",
    "absolute",
    "clip",
    "mask",
    "reduce",
    "sum",
    "mean",
    "l1_norm",
    "l2_norm",
    "reshape",
    "transpose",
    "concat",
    "getitem",
    "broadcast_to",
    "record",
    "backward",
    "finite_diff_check",
    "param_gradient_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ContractError(ValueError):
    """A caller violated an engine precondition."""


_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording on the current thread (inference passes)."""
    prev = _recording()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """Dense float64 array plus the bookkeeping needed for reverse mode.

    Leaves created with ``requires_grad=True`` are parameters; every other
    tensor that depends on one records ``parents`` and ``backward_fn``.
    """

    __slots__ = ("data", "parents", "backward_fn", "requires_grad", "op", "name", "__weakref__")

    def __init__(
        self,
        data,
        parents: tuple["Tensor", ...] = (),
        backward_fn: Callable | None = None,
        op: str = "leaf",
        requires_grad: bool = False,
        name: str | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.op = op
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{label})"

    __hash__ = object.__hash__

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, _wrap(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __getitem__(self, key):
        return getitem(self, key)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return tensor(data, requires_grad=False)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def record(value: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap ``value`` as the result of op ``op``.

    ``backward_fn`` maps the upstream gradient to a tuple with one gradient
    (or None) per parent.  This is also the hook for fused custom ops.
    """
    if not np.all(np.isfinite(value)):
        raise DomainError(f"{op} produced non-finite values")
    if _recording() and any(p.requires_grad for p in parents):
        return Tensor(value, tuple(parents), backward_fn, op, requires_grad=True)
    return Tensor(value, op=op)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a (m, k) and a (k, n) tensor."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        return g @ B.T, A.T @ g

    return record(A @ B, (a, b), bw, "matmul")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return record(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return record(A * B, (a, b), lambda g: (g * B, g * A), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("div", a, b)
    A, B = a.data, b.data
    if np.any(B == 0):
        raise DomainError("div: zero denominator")
    out = A / B
    return record(out, (a, b), lambda g: (g / B, -g * out / B), "div")


def neg(a: Tensor) -> Tensor:
    return record(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a: Tensor, c: float) -> Tensor:
    return record(a.data * c, (a,), lambda g: (g * c,), "scale")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    s = _stable_sigmoid(a.data)
    return record(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return record(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return record(e, (a,), lambda g: (g * e,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0):
        raise DomainError("log: input must be strictly positive")
    return record(np.log(x), (a,), lambda g: (g / x,), "log")


def square(a: Tensor) -> Tensor:
    x = a.data
    return record(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def absolute(a: Tensor) -> Tensor:
    x = a.data
    return record(np.abs(x), (a,), lambda g: (g * np.sign(x),), "abs")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is zero where the clamp is active."""
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return record(np.clip(x, lo, hi), (a,), lambda g: (g * inside,), "clip")


def mask(a: Tensor, keep: np.ndarray) -> Tensor:
    """Zero the entries where ``keep`` is False; gradient flows through kept ones."""
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != a.shape:
        raise ShapeError(f"mask: mask shape {keep.shape} vs tensor {a.shape}")
    return record(np.where(keep, a.data, 0.0), (a,), lambda g: (np.where(keep, g, 0.0),), "mask")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "square": square,
}


def elementwise(kind: str, *args: Tensor) -> Tensor:
    """Dispatch one of add, sub, mul, sigmoid, tanh, exp, log, square."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ContractError(f"unknown elementwise kind {kind!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# reductions


def _check_axis(x: Tensor, axis: int | None) -> int | None:
    if axis is None:
        return None
    nd = x.data.ndim
    if not -nd <= axis < nd:
        raise ContractError(f"axis {axis} invalid for shape {x.shape}")
    return axis % nd


def _expand(g: np.ndarray, x: Tensor, axis: int | None, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, x.shape)


def sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axis = _check_axis(x, axis)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)
    return record(out, (x,), lambda g: (_expand(g, x, axis, keepdims),), "sum")


def mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    axis = _check_axis(x, axis)
    n = x.size if axis is None else x.shape[axis]
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    return record(out, (x,), lambda g: (_expand(g, x, axis, keepdims) / n,), "mean")


def l1_norm(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    axis = _check_axis(x, axis)
    out = np.sum(np.abs(x.data), axis=axis, keepdims=keepdims)
    sign = np.sign(x.data)
    return record(out, (x,), lambda g: (_expand(g, x, axis, keepdims) * sign,), "l1_norm")


def l2_norm(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Euclidean norm; the gradient at the origin is taken as zero."""
    axis = _check_axis(x, axis)
    out = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=keepdims))

    def bw(g):
        n = out if (axis is None or keepdims) else np.expand_dims(out, axis)
        safe = np.where(n > 0, n, 1.0)
        return (_expand(g, x, axis, keepdims) * np.where(n > 0, x.data / safe, 0.0),)

    return record(out, (x,), bw, "l2_norm")


_REDUCE = {"sum": sum, "mean": mean, "l1_norm": l1_norm, "l2_norm": l2_norm}


def reduce(kind: str, x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Dispatch one of sum, mean, l1_norm, l2_norm."""
    try:
        fn = _REDUCE[kind]
    except KeyError:
        raise ContractError(f"unknown reduction {kind!r}") from None
    return fn(x, axis=axis, keepdims=keepdims)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {old} -> {tuple(shape)}: {exc}") from None
    return record(out, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return record(out, (x,), lambda g: (np.transpose(g, inv),), "transpose")


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ContractError("concat: empty input")
    try:
        out = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in xs]}: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]
    return record(out, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def getitem(x: Tensor, key) -> Tensor:
    out = x.data[key]

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return record(np.array(out), (x,), bw, "getitem")


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit numpy-style broadcast; backward sums over the expanded axes."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None
    src = x.shape

    def bw(g):
        lead = g.ndim - len(src)
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(src) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g.reshape(src),)

    return record(np.array(out), (x,), bw, "broadcast_to")


# ---------------------------------------------------------------------------
# reverse pass


class GradientMap:
    """Gradients keyed by leaf tensor; missing leaves read as zeros."""

    def __init__(self, grads: dict[int, np.ndarray], leaves: dict[int, Tensor]):
        self._grads = grads
        self._leaves = leaves

    def __getitem__(self, param: Tensor) -> np.ndarray:
        g = self._grads.get(id(param))
        if g is None or self._leaves.get(id(param)) is not param:
            return np.zeros_like(param.data)
        return g

    def __contains__(self, param: Tensor) -> bool:
        return self._leaves.get(id(param)) is param

    def __len__(self) -> int:
        return len(self._leaves)

    def params(self) -> list[Tensor]:
        return list(self._leaves.values())


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> GradientMap:
    """Gradient of a scalar ``loss`` with respect to every leaf parameter."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return GradientMap({}, {})
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None) if node.parents else grads.get(id(node))
        if node.is_leaf:
            leaves[id(node)] = node
            continue
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=np.float64)
    out = {k: v for k, v in grads.items() if k in leaves}
    return GradientMap(out, leaves)


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: np.ndarray | Tensor,
    h: float = 1e-6,
    coords: Iterable[int] | None = None,
) -> float:
    """Max relative error between backward() and central differences of ``f`` at ``x``.

    ``coords`` optionally restricts the comparison to a subset of flat indices.
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    p = parameter(base.copy())
    analytic = backward(f(p))[p].ravel()
    flat = base.ravel()
    worst = 0.0
    idx = range(flat.size) if coords is None else coords
    with no_grad():
        for i in idx:
            xp, xm = flat.copy(), flat.copy()
            xp[i] += h
            xm[i] -= h
            fp = f(constant(xp.reshape(base.shape))).item()
            fm = f(constant(xm.reshape(base.shape))).item()
            numeric = (fp - fm) / (2.0 * h)
            a = analytic[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def param_gradient_check(
    loss_fn: Callable[[], Tensor],
    param: Tensor,
    h: float = 1e-6,
    coords: Iterable[int] | None = None,
) -> float:
    """Like :func:`finite_diff_check` but perturbs an existing parameter in place.

    ``loss_fn`` rebuilds the graph from scratch on every call, so this checks
    gradients of whole models with respect to one of their parameters.
    """
    analytic = backward(loss_fn())[param].ravel()
    flat = param.data.reshape(-1)
    original = param.data
    worst = 0.0
    idx = range(flat.size) if coords is None else coords
    try:
        with no_grad():
            for i in idx:
                work = original.copy().reshape(-1)
                work[i] = flat[i] + h
                param.data = work.reshape(original.shape)
                fp = loss_fn().item()
                work[i] = flat[i] - h
                fm = loss_fn().item()
                numeric = (fp - fm) / (2.0 * h)
                a = analytic[i]
                worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
    finally:
        param.data = original
    return worst
