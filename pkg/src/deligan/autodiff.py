"""Dense-tensor computation graph with reverse-mode differentiation.

Every network and loss in this package is built from the ops below. Values are
float64 numpy arrays; each op records its parents and a local backward rule on
the output node, and :func:`backward` replays those rules in reverse
topological order.

Broadcasting is deliberately narrow: binary ops accept equal shapes, a python
scalar, or a single bias row ``(1, n)`` / ``(n,)`` against a ``(b, n)`` matrix.
Anything else is a :class:`ShapeError`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

LOG_EPS = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class Node:
    """Back-reference from an output tensor to the op that produced it."""

    __slots__ = ("op", "parents", "backward")

    def __init__(self, op: str, parents: tuple, backward: Callable[[np.ndarray], tuple]):
        self.op = op
        self.parents = parents
        self.backward = backward


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "node", "name")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.values)

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        op = f" op={self.node.op}" if self.node else ""
        return f"Tensor(shape={self.shape}{label}{op})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values: np.ndarray, op: str, parents: tuple, rule: Callable) -> Tensor:
    if np.isnan(values).any():
        raise FloatingPointError(f"{op}: NaN in output")
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out.node = Node(op, parents, rule) if out.requires_grad else None
    return out


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape:
        return
    for big, small in ((a, b), (b, a)):
        if big.ndim == 2 and small.ndim in (1, 2) and small.shape[-1] == big.shape[-1]:
            if small.ndim == 1 or small.shape[0] == 1:
                return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    # a bias row was broadcast down the batch axis
    return grad.sum(axis=0).reshape(shape)


def _promote(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        b = as_tensor(b)
        a = Tensor(np.full(b.shape, float(a)))
    elif not isinstance(b, Tensor):
        b = Tensor(np.full(a.shape, float(b)))
    return a, b


# ---------------------------------------------------------------------------
# binary ops


def add(a, b) -> Tensor:
    a, b = _promote(a, b)
    _check_broadcast("add", a.values, b.values)
    sa, sb = a.shape, b.shape
    return _make(a.values + b.values, "add", (a, b),
                 lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _promote(a, b)
    _check_broadcast("sub", a.values, b.values)
    sa, sb = a.shape, b.shape
    return _make(a.values - b.values, "sub", (a, b),
                 lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _promote(a, b)
    _check_broadcast("mul", a.values, b.values)
    av, bv = a.values, b.values
    return _make(av * bv, "mul", (a, b),
                 lambda g: (_reduce_to(g * bv, av.shape), _reduce_to(g * av, bv.shape)))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a bias row ``(n,)`` to every row of ``x`` of shape ``(b, n)``."""
    if x.values.ndim != 2 or bias.values.ndim != 1 or bias.shape[0] != x.shape[1]:
        raise ShapeError(f"add_bias: incompatible shapes {x.shape} and {bias.shape}")
    return _make(x.values + bias.values, "add_bias", (x, bias),
                 lambda g: (g, g.sum(axis=0)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values
    return _make(av @ bv, "matmul", (a, b), lambda g: (g @ bv.T, av.T @ g))


# ---------------------------------------------------------------------------
# unary ops


def neg(x: Tensor) -> Tensor:
    return _make(-x.values, "neg", (x,), lambda g: (-g,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.values)
    return _make(out, "exp", (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    """Natural log on input clamped below at ``LOG_EPS``.

    The clamp zeroes the gradient where it is active.
    """
    xv = x.values
    clamped = np.maximum(xv, LOG_EPS)
    live = xv >= LOG_EPS
    return _make(np.log(clamped), "log", (x,), lambda g: (np.where(live, g / clamped, 0.0),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.values)
    return _make(out, "tanh", (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    xv = x.values
    # split by sign so exp never overflows
    ez = np.exp(-np.abs(xv))
    out = np.where(xv >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))
    return _make(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    return _make(np.where(mask, x.values, 0.0), "relu", (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.values > 0
    scale = np.where(mask, 1.0, slope)
    return _make(x.values * scale, "leaky_relu", (x,), lambda g: (g * scale,))


def square(x: Tensor) -> Tensor:
    xv = x.values
    return _make(xv * xv, "square", (x,), lambda g: (2.0 * g * xv,))


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log-softmax of a ``(b, c)`` matrix."""
    if x.values.ndim != 2:
        raise ShapeError(f"log_softmax: expected a matrix, got {x.shape}")
    shifted = x.values - x.values.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(out)
    return _make(out, "log_softmax", (x,),
                 lambda g: (g - probs * g.sum(axis=1, keepdims=True),))


def take_rows(x: Tensor, index: Sequence[int]) -> Tensor:
    """Gather rows ``x[index]``; repeated indices accumulate in the backward pass."""
    idx = np.asarray(index, dtype=np.int64)
    n = x.shape[0]

    def rule(g):
        gx = np.zeros((n,) + g.shape[1:])
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(x.values[idx], "take_rows", (x,), rule)


# ---------------------------------------------------------------------------
# reductions


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors the op name
    shape = x.shape
    return _make(np.array(x.values.sum()), "sum", (x,), lambda g: (np.full(shape, float(g)),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return _make(np.array(x.values.mean()), "mean", (x,),
                 lambda g: (np.full(shape, float(g) / n),))


def sum_rows(x: Tensor) -> Tensor:
    """Sum over the batch axis: ``(b, n) -> (n,)``."""
    b = x.shape[0]
    return _make(x.values.sum(axis=0), "sum_rows", (x,),
                 lambda g: (np.broadcast_to(g, (b,) + g.shape).copy(),))


def mean_rows(x: Tensor) -> Tensor:
    """Mean over the batch axis: ``(b, n) -> (n,)``."""
    b = x.shape[0]
    return _make(x.values.mean(axis=0), "mean_rows", (x,),
                 lambda g: (np.broadcast_to(g / b, (b,) + g.shape).copy(),))


# ---------------------------------------------------------------------------
# backward pass


class GradientTape:
    """Operations reachable from a root, in the order they were recorded.

    ``nodes`` is a topological order (parents before children); the backward
    pass walks it in reverse so each op's rule fires exactly once, after all
    of its consumers have contributed to its output gradient.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "GradientTape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t.node is not None:
                for p in t.node.parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def ops(self) -> list[str]:
        return [t.node.op for t in self.nodes if t.node is not None]


def backward(loss: Tensor) -> GradientTape:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable leaf.

    Gradients add onto whatever is already in ``grad``; zero them between steps.
    Intermediate (non-leaf) tensors do not keep their gradients.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = GradientTape.from_root(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for t in reversed(tape.nodes):
        g = pending.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t.node.parents, t.node.backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg
    return tape


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between autodiff and central-difference gradients of ``f`` at ``x``.

    Relative error per entry is ``|g_ad - g_fd| / max(|g_ad| + |g_fd|, 1e-8)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x.requires_grad = True
    x.zero_grad()
    backward(f(x))
    g_ad = x.grad.copy()

    flat = x.values.reshape(-1)
    g_fd = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x).item()
        flat[i] = orig - eps
        lo = f(x).item()
        flat[i] = orig
        g_fd[i] = (hi - lo) / (2.0 * eps)
    g_ad = g_ad.reshape(-1)
    denom = np.maximum(np.abs(g_ad) + np.abs(g_fd), 1e-8)
    return float(np.max(np.abs(g_ad - g_fd) / denom))
