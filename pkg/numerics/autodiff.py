"""
Define-by-run reverse-mode differentiation over numpy arrays.

Every differentiable primitive builds a `GradVar` that remembers its parents and
a vector-Jacobian product. `backward(loss)` walks the graph in reverse
topological order and leaves a `.grad` on each parameter leaf. The graph is
rebuilt on every evaluation; nothing is cached between calls.

Cholesky and triangular solves carry analytic adjoints so the whole variational
objective can route through them.
"""

import numbers
from typing import Callable, Iterable, Sequence, Tuple, Union

import numpy as np
from scipy import special

import config
from errors import NonFiniteGradient, NonFiniteValue, UnsupportedPrimitive
from numerics import linalg

ArrayLike = Union["GradVar", np.ndarray, float, int]


class GradVar:
    """
    A node in a differentiable computation graph.

    Attributes:
        value (np.ndarray): The float64 value held by the node.
        requires_grad (bool): True for parameters and for every node computed
            from at least one parameter.
        grad (np.ndarray | None): Filled by `backward` on parameter leaves.
        name (str | None): Optional label used in error messages.
    """

    __slots__ = ("value", "requires_grad", "grad", "name", "_parents", "_vjp")
    __array_ufunc__ = None

    def __init__(self, value, requires_grad: bool = False, name: str = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents: Tuple["GradVar", ...] = ()
        self._vjp: Callable = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return transpose(self)

    @property
    def is_leaf(self):
        return self._vjp is None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"GradVar(shape={self.shape}{label}, requires_grad={self.requires_grad})"

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return gather(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)


def parameter(value, name: str = None) -> GradVar:
    """A leaf that receives a gradient in `backward`."""
    return GradVar(np.array(value, dtype=np.float64, copy=True), requires_grad=True, name=name)


def lift(x: ArrayLike) -> GradVar:
    if isinstance(x, GradVar):
        return x
    if isinstance(x, (numbers.Number, np.ndarray, np.generic, list, tuple)):
        return GradVar(x)
    raise UnsupportedPrimitive(f"Cannot lift {type(x).__name__} into the gradient graph.")


def value_of(x: ArrayLike) -> np.ndarray:
    return x.value if isinstance(x, GradVar) else np.asarray(x, dtype=np.float64)


def _make(value: np.ndarray, parents: Sequence[GradVar], vjp: Callable, op: str) -> GradVar:
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NonFiniteValue(f"Primitive '{op}' produced a non-finite value.")
    if not any(p.requires_grad for p in parents):
        return GradVar(value)
    node = GradVar(value, requires_grad=True)
    node._parents = tuple(parents)
    node._vjp = vjp
    return node


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sums `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# --- Elementwise arithmetic ---

def add(a: ArrayLike, b: ArrayLike) -> GradVar:
    a, b = lift(a), lift(b)
    return _make(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a: ArrayLike, b: ArrayLike) -> GradVar:
    a, b = lift(a), lift(b)
    return _make(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a: ArrayLike, b: ArrayLike) -> GradVar:
    a, b = lift(a), lift(b)
    return _make(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
        "mul",
    )


def div(a: ArrayLike, b: ArrayLike) -> GradVar:
    a, b = lift(a), lift(b)
    out = a.value / b.value
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.value, a.shape), _unbroadcast(-g * out / b.value, b.shape)),
        "div",
    )


def neg(a: ArrayLike) -> GradVar:
    a = lift(a)
    return _make(-a.value, (a,), lambda g: (-g,), "neg")


def power(a: ArrayLike, exponent) -> GradVar:
    if isinstance(exponent, GradVar) or not float(exponent).is_integer():
        raise UnsupportedPrimitive("Only constant integer powers are differentiable.")
    a = lift(a)
    n = int(exponent)
    if n == 2:
        return square(a)
    return _make(a.value ** n, (a,), lambda g: (g * n * a.value ** (n - 1),), "power")


def square(a: ArrayLike) -> GradVar:
    a = lift(a)
    return _make(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,), "square")


def exp(a: ArrayLike) -> GradVar:
    a = lift(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: ArrayLike) -> GradVar:
    a = lift(a)
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def sqrt(a: ArrayLike) -> GradVar:
    a = lift(a)
    out = np.sqrt(a.value)
    return _make(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def erf(a: ArrayLike) -> GradVar:
    a = lift(a)
    return _make(
        special.erf(a.value),
        (a,),
        lambda g: (g * (2.0 / np.sqrt(np.pi)) * np.exp(-a.value * a.value),),
        "erf",
    )


def log_ndtr(a: ArrayLike) -> GradVar:
    """log Phi(a), stable in both tails."""
    a = lift(a)
    out = special.log_ndtr(a.value)

    def vjp(g):
        log_pdf = -0.5 * a.value * a.value - 0.5 * np.log(2.0 * np.pi)
        return (g * np.exp(log_pdf - out),)

    return _make(out, (a,), vjp, "log_ndtr")


def clip_min(a: ArrayLike, floor: float) -> GradVar:
    a = lift(a)
    keep = a.value > floor
    return _make(np.where(keep, a.value, floor), (a,), lambda g: (g * keep,), "clip_min")


# --- Shape and reduction ---

def reduce_sum(a: ArrayLike, axis=None, keepdims: bool = False) -> GradVar:
    a = lift(a)
    out = np.sum(a.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), vjp, "sum")


def mean(a: ArrayLike, axis=None) -> GradVar:
    a = lift(a)
    count = a.size if axis is None else a.shape[axis]
    return reduce_sum(a, axis=axis) / float(count)


def broadcast_to(a: ArrayLike, shape) -> GradVar:
    a = lift(a)
    return _make(
        np.broadcast_to(a.value, shape).copy(),
        (a,),
        lambda g: (_unbroadcast(g, a.shape),),
        "broadcast",
    )


def reshape(a: ArrayLike, shape) -> GradVar:
    a = lift(a)
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: ArrayLike) -> GradVar:
    a = lift(a)
    if a.ndim != 2:
        raise UnsupportedPrimitive(f"transpose supports matrices only, got ndim={a.ndim}")
    return _make(a.value.T, (a,), lambda g: (g.T,), "transpose")


def gather(a: ArrayLike, index) -> GradVar:
    a = lift(a)

    def vjp(g):
        full = np.zeros_like(a.value)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.value[index], (a,), vjp, "gather")


def diag_part(a: ArrayLike) -> GradVar:
    a = lift(a)
    idx = np.arange(min(a.shape))
    return gather(a, (idx, idx))


def concatenate(parts: Iterable[ArrayLike], axis: int = 0) -> GradVar:
    parts = [lift(p) for p in parts]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(np.concatenate([p.value for p in parts], axis=axis), parts, vjp, "concatenate")


# --- Linear algebra ---

def matmul(a: ArrayLike, b: ArrayLike) -> GradVar:
    a, b = lift(a), lift(b)
    if a.ndim != 2 or b.ndim != 2:
        raise UnsupportedPrimitive(
            f"matmul supports 2-D operands only, got {a.shape} @ {b.shape}"
        )
    return _make(
        a.value @ b.value,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
        "matmul",
    )


def kron(a: ArrayLike, b: ArrayLike) -> GradVar:
    """Kronecker product; (A kron B)[i*P+p, j*Q+q] = A[i,j] B[p,q]."""
    a, b = lift(a), lift(b)
    m, n = a.shape
    p, q = b.shape

    def vjp(g):
        g4 = g.reshape(m, p, n, q)
        return (
            np.einsum("ipjq,pq->ij", g4, b.value),
            np.einsum("ipjq,ij->pq", g4, a.value),
        )

    return _make(linalg.kron(a.value, b.value), (a, b), vjp, "kron")


def _phi(X: np.ndarray) -> np.ndarray:
    """Lower triangle with the diagonal halved."""
    return np.tril(X) - 0.5 * np.diag(np.diag(X))


def cholesky(a: ArrayLike, return_jitter: bool = False):
    """
    Differentiable `cholesky_psd`. The jitter is treated as a constant.

    The adjoint is the symmetric one: for L = chol(A),
    A_bar = sym(L^-T Phi(L^T L_bar) L^-1).
    """
    a = lift(a)
    L, eps = linalg.cholesky_psd(a.value)

    def vjp(g):
        P = _phi(L.T @ g)
        S = linalg.solve_triangular(L, linalg.solve_triangular(L, P.T, trans=True).T, trans=True)
        return (0.5 * (S + S.T),)

    out = _make(L, (a,), vjp, "cholesky")
    return (out, eps) if return_jitter else out


def solve_triangular(L: ArrayLike, B: ArrayLike, trans: bool = False) -> GradVar:
    """X with L X = B (or L^T X = B when trans) for lower-triangular L."""
    L, B = lift(L), lift(B)
    if B.ndim != 2:
        raise UnsupportedPrimitive("solve_triangular expects a 2-D right-hand side.")
    X = linalg.solve_triangular(L.value, B.value, lower=True, trans=trans)

    def vjp(g):
        if trans:
            B_bar = linalg.solve_triangular(L.value, g, lower=True, trans=False)
            L_bar = -X @ B_bar.T
        else:
            B_bar = linalg.solve_triangular(L.value, g, lower=True, trans=True)
            L_bar = -B_bar @ X.T
        return (np.tril(L_bar), B_bar)

    return _make(X, (L, B), vjp, "solve_triangular")


# --- Backward pass ---

def _topological_order(root: GradVar):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: GradVar) -> None:
    """
    Accumulates d(loss)/d(leaf) into `.grad` of every parameter leaf reachable
    from `loss`. Leaves that `loss` does not depend on keep `.grad` unchanged.

    Raises:
        ValueError: If `loss` is not a scalar.
        NonFiniteGradient: If any parameter gradient is NaN or Inf.
    """
    if not isinstance(loss, GradVar) or loss.size != 1:
        raise ValueError("backward needs a scalar GradVar loss")
    if not loss.requires_grad:
        return

    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g if node.grad is None else node.grad + g
            if not np.all(np.isfinite(node.grad)):
                label = node.name or repr(node)
                raise NonFiniteGradient(f"Gradient for {label} is not finite.")
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64)
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def gradients(loss: GradVar, leaves: dict) -> dict:
    """Runs `backward` and returns {name: grad}, zeros for leaves `loss` ignores."""
    for leaf in leaves.values():
        leaf.grad = None
    backward(loss)
    return {
        name: leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        for name, leaf in leaves.items()
    }


def triangular_factor(raw: ArrayLike) -> GradVar:
    """
    Lower-triangular factor from an unconstrained square matrix: the strictly
    lower part is kept, the diagonal is exponentiated.
    """
    raw = lift(raw)
    n = raw.shape[-1]
    strict = np.tril(np.ones((n, n)), k=-1)
    diagonal = reshape(exp(diag_part(raw)), (n, 1)) * np.eye(n)
    return raw * strict + diagonal


def variance_floor(a: ArrayLike) -> GradVar:
    return clip_min(a, config.VARIANCE_FLOOR)
