"""Dense-tensor reverse-mode automatic differentiation on top of numpy.

Every op returns a new :class:`Tensor`. When gradient recording is enabled and
at least one input requires a gradient, the result keeps references to its
parents plus a closure that maps the output gradient to input gradients.
:func:`backward` topologically sorts the reachable graph into a :class:`Tape`
and replays it in reverse.
"""

from __future__ import annotations

import contextlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "GradCheckReport",
    "no_grad",
    "is_grad_enabled",
    "set_default_dtype",
    "get_default_dtype",
    "tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "matmul",
    "transpose",
    "swapaxes",
    "reshape",
    "concat",
    "take",
    "sum",
    "mean",
    "abs",
    "square",
    "exp",
    "log",
    "relu",
    "gelu",
    "elu",
    "leaky_relu",
    "sigmoid",
    "tanh",
    "activation",
    "softmax",
    "log_softmax",
    "layer_norm",
    "linear_scan",
    "dropout",
    "backward",
    "zero_grad",
    "grad_check",
]

LEAKY_SLOPE = 0.01
LN_EPS = 1e-5
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715

_default_dtype = np.float64
_grad_enabled = True
_ids = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes " + " and ".join(str(tuple(s)) for s in shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(ArithmeticError):
    """Raised when an op produces NaN or Inf."""


def set_default_dtype(dtype) -> None:
    global _default_dtype
    _default_dtype = np.dtype(dtype).type


def get_default_dtype():
    return _default_dtype


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation, optimizer updates)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "node_id", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = data if type(data) is np.ndarray else np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(_default_dtype)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"

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
    def T(self) -> Tensor:
        return transpose(self)

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    __array_priority__ = 100

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False, name: str | None = None, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name, dtype=dtype)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _check_finite(out: np.ndarray, op: str) -> None:
    if not np.isfinite(out).all():
        raise NonFiniteError(f"{op}: produced non-finite values")


def _make(out: np.ndarray, parents: tuple[Tensor, ...], grad_fn, op: str) -> Tensor:
    _check_finite(out, op)
    res = Tensor(out)
    res._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        res.requires_grad = True
        res._parents = parents
        res._backward = grad_fn
    return res


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape == b.data.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a, b) -> Tensor:
    """Hadamard (elementwise) product with numpy broadcasting."""
    a, b = _pair(a, b)
    _broadcast_shape("hadamard", a, b)

    def grad_fn(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), grad_fn, "hadamard")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def grad_fn(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), grad_fn, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _lift(b, a)
    b = _lift(b)
    return _lift(a, b), b


# ---------------------------------------------------------------- linear algebra and shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; leading axes broadcast like ``np.matmul``."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape, detail="operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape, detail="inner dimensions differ")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape, detail="batch dimensions do not broadcast") from None

    def grad_fn(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), grad_fn, "matmul")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        if a.ndim < 2:
            return a
        return swapaxes(a, -1, -2)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return _make(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: empty input")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError("concat", tensors[0].shape, t.shape, detail=f"axis={axis}")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), grad_fn, "concat")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(i is Ellipsis or i is None or isinstance(i, (int, slice)) for i in items)


def _getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]
    basic = _is_basic_index(index)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g  # basic indexing never repeats an element
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, copy=True), (a,), grad_fn, "getitem")


def take(a: Tensor, indices, axis: int) -> Tensor:
    """Gather ``indices`` along ``axis`` (indices may repeat)."""
    idx = np.asarray(indices, dtype=np.intp)
    ax = axis % a.ndim

    def grad_fn(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, ax, 0)
        np.add.at(moved, idx, np.moveaxis(g, ax, 0))
        return (full,)

    return _make(np.take(a.data, idx, axis=ax), (a,), grad_fn, "take")


# ---------------------------------------------------------------- reductions


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), grad_fn, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------- pointwise nonlinearities


def abs(a: Tensor) -> Tensor:  # noqa: A001
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,), "log")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0).astype(a.dtype), (a,), lambda g: (g * pos,), "relu")


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    d = np.where(a.data > 0, 1.0, slope).astype(a.dtype)
    return _make(a.data * d, (a,), lambda g: (g * d,), "leaky_relu")


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    x = a.data
    neg_part = alpha * np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg_part).astype(a.dtype)
    d = np.where(x > 0, 1.0, neg_part + alpha).astype(a.dtype)
    return _make(out, (a,), lambda g: (g * d,), "elu")


def gelu(a: Tensor) -> Tensor:
    """GeLU, tanh approximation."""
    x = a.data
    t = np.tanh(_SQRT_2_OVER_PI * (x + _GELU_C * x * x * x))
    out = 0.5 * x * (1.0 + t)

    def grad_fn(g):
        du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _make(out, (a,), grad_fn, "gelu")


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


_ACTIVATIONS = {
    "relu": relu,
    "gelu": gelu,
    "elu": elu,
    "leaky_relu": leaky_relu,
    "leakyrelu": leaky_relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


# ---------------------------------------------------------------- normalizers


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), grad_fn, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def grad_fn(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), grad_fn, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last axis, then apply ``gain`` and ``bias``.

    ``gain``/``bias`` must broadcast against ``x`` and end in ``x.shape[-1]``.
    Passing ``None`` for both skips the affine step.
    """
    c = x.shape[-1]
    if c == 0:
        raise ShapeError("layer_norm", x.shape, detail="zero-extent normalization axis")
    for p in (gain, bias):
        if p is not None and p.shape[-1] != c:
            raise ShapeError("layer_norm", x.shape, p.shape, detail="affine extent must match last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data if gain is not None else 1.0
    bd = bias.data if bias is not None else 0.0
    out = xhat * gd + bd
    parents = tuple(p for p in (x, gain, bias) if p is not None)

    def grad_fn(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        grads = [dx]
        if gain is not None:
            grads.append(_unbroadcast(g * xhat, gain.shape))
        if bias is not None:
            grads.append(_unbroadcast(g, bias.shape))
        return tuple(grads)

    return _make(np.asarray(out, dtype=x.dtype), parents, grad_fn, "layer_norm")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: training mode requires an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return mul(x, Tensor(keep))


def linear_scan(a: Tensor, f: Tensor, c0: Tensor, axis: int = 0) -> Tensor:
    """First-order recurrence ``c_t = a_t + f_t * c_{t-1}`` along ``axis``.

    ``c0`` has the shape of one step. Returns every ``c_t`` stacked along
    ``axis``. Backward runs the adjoint recurrence in reverse time.
    """
    a, f, c0 = _lift(a), _lift(f), _lift(c0)
    if a.shape != f.shape:
        raise ShapeError("linear_scan", a.shape, f.shape, detail="a and f must match")
    ax = axis % a.ndim
    step_shape = a.shape[:ax] + a.shape[ax + 1 :]
    if c0.shape != step_shape:
        raise ShapeError("linear_scan", a.shape, c0.shape, detail=f"initial state must be {step_shape}")
    A = np.moveaxis(a.data, ax, 0)
    F = np.moveaxis(f.data, ax, 0)
    C = np.empty(A.shape, dtype=np.result_type(A, F, c0.data))
    prev = c0.data
    for t in range(A.shape[0]):
        prev = A[t] + F[t] * prev
        C[t] = prev

    def grad_fn(g):
        G = np.moveaxis(g, ax, 0)
        ga = np.empty_like(C)
        gf = np.empty_like(C)
        carry = np.zeros(C.shape[1:], dtype=C.dtype)
        for t in range(C.shape[0] - 1, -1, -1):
            d = G[t] + carry
            ga[t] = d
            gf[t] = d * (C[t - 1] if t > 0 else c0.data)
            carry = F[t] * d
        return np.moveaxis(ga, 0, ax), np.moveaxis(gf, 0, ax), carry

    return _make(np.moveaxis(C, 0, ax), (a, f, c0), grad_fn, "linear_scan")


# ---------------------------------------------------------------- backward pass


@dataclass
class Tape:
    """Topologically ordered nodes reachable from an output (inputs first)."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> Tape:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and p.node_id not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> Tape:
    """Populate ``.grad`` on every leaf reachable from scalar ``loss``.

    Leaf gradients accumulate across calls until :func:`zero_grad`. Any tensor
    in ``params`` that is unreachable ends up with an all-zero gradient.
    """
    if loss.data.size != 1:
        raise ShapeError("backward", loss.shape, detail="loss must be scalar")
    tape = Tape.from_output(loss) if loss.requires_grad else Tape([])
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
    return tape


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------- gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(err <= self.tol for err in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def __str__(self) -> str:
        lines = [f"{k}: {v:.3e}" for k, v in self.max_rel_error.items()]
        return ("PASS" if self.passed else "FAIL") + f" (tol {self.tol:g})\n" + "\n".join(lines)


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor] | dict[str, Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f()`` with central differences.

    Error per element is ``|analytic - numeric| / max(1, |numeric|)``. Params
    should be 64-bit; ``f`` must be deterministic.
    """
    named = dict(params) if isinstance(params, dict) else {p.name or f"p{i}": p for i, p in enumerate(params)}
    plist = list(named.values())
    zero_grad(plist)
    backward(f(), plist)
    analytic = {k: p.grad.copy() for k, p in named.items()}
    errors: dict[str, float] = {}
    with no_grad():
        for k, p in named.items():
            worst = 0.0
            for idx in np.ndindex(p.shape):
                orig = p.data[idx]
                p.data[idx] = orig + eps
                fp = f().item()
                p.data[idx] = orig - eps
                fm = f().item()
                p.data[idx] = orig
                num = (fp - fm) / (2.0 * eps)
                err = float(np.abs(analytic[k][idx] - num) / max(1.0, np.abs(num)))
                worst = max(worst, err)
            errors[k] = worst
    zero_grad(plist)
    return GradCheckReport(errors, tol)
