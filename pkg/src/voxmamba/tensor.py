"""Dense N-D tensors with reverse-mode automatic differentiation.

The gradient tape is built dynamically: every operation links its output to
its inputs together with a backward closure, and ``backward()`` on a scalar
replays the closures in reverse topological order, visiting each node exactly
once. Gradients accumulate additively across multiple uses of a tensor.

Broadcasting follows the trailing-axis rule: shapes are right-aligned and
size-1 axes stretch (numpy semantics).

Values default to float32; pass float64 arrays for high-precision checks.
Any non-finite value appearing in a forward result raises ``NumericError``
immediately instead of propagating silently.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericError, ShapeError

DEFAULT_DTYPE = np.float32

_grad_enabled = True


class no_grad:
    """Context manager that disables tape construction (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _check_finite(arr: np.ndarray, op: str) -> None:
    if arr.size and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value produced by '{op}'")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    """A dense array plus optional gradient-tape participation."""

    __slots__ = ("data", "grad", "requires_grad", "_children", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._children: tuple = ()
        self._backward = None

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, children, backward, op: str) -> "Tensor":
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._children = ()
        out._backward = None
        out.requires_grad = False
        if _grad_enabled and any(c.requires_grad for c in children):
            out.requires_grad = True
            out._children = tuple(children)
            out._backward = backward
        return out

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            # g can alias another node's buffer or need broadcasting/casting;
            # a same-shape copy is one pass instead of zeros + add
            if (isinstance(g, np.ndarray) and g.shape == self.data.shape
                    and g.dtype == self.data.dtype):
                self.grad = g.copy()
            else:
                self.grad = np.zeros_like(self.data)
                self.grad += g
        else:
            self.grad += g

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- backward ------------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode pass from a scalar loss down to every leaf."""
        if self.data.size != 1:
            raise ContractError(
                f"backward() requires a scalar, got shape {self.shape}"
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._children:
                if id(child) not in visited:
                    stack.append((child, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic ----------------------------------------------

    @staticmethod
    def _coerce(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def _scalar_add(self, c):
        a = self

        def backward(g):
            if a.requires_grad:
                a._accum(g)

        return Tensor._from_op(a.data + c, (a,), backward, "add")

    def _scalar_mul(self, c):
        a = self

        def backward(g):
            if a.requires_grad:
                a._accum(g * c)

        return Tensor._from_op(a.data * c, (a,), backward, "mul")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            # python scalars promote weakly, preserving the tensor dtype
            return self._scalar_add(other)
        other = Tensor._coerce(other)
        a, b = self, other
        try:
            data = a.data + b.data
        except ValueError:
            raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape} in add")

        def backward(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.shape))

        return Tensor._from_op(data, (a, b), backward, "add")

    __radd__ = __add__

    def __neg__(self):
        a = self

        def backward(g):
            if a.requires_grad:
                a._accum(-g)

        return Tensor._from_op(-a.data, (a,), backward, "neg")

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self._scalar_add(-other)
        return self + (-Tensor._coerce(other))

    def __rsub__(self, other):
        if isinstance(other, (int, float)):
            return (-self)._scalar_add(other)
        return Tensor._coerce(other) + (-self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self._scalar_mul(other)
        other = Tensor._coerce(other)
        a, b = self, other
        try:
            data = a.data * b.data
        except ValueError:
            raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape} in mul")

        def backward(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))

        return Tensor._from_op(data, (a, b), backward, "mul")

    __rmul__ = __mul__

    def reciprocal(self):
        a = self
        data = 1.0 / a.data

        def backward(g):
            if a.requires_grad:
                a._accum(-g * data * data)

        return Tensor._from_op(data, (a,), backward, "reciprocal")

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self._scalar_mul(1.0 / other)
        return self * Tensor._coerce(other).reciprocal()

    def __rtruediv__(self, other):
        if isinstance(other, (int, float)):
            return self.reciprocal()._scalar_mul(other)
        return Tensor._coerce(other) * self.reciprocal()

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise ContractError("only scalar exponents are supported")
        a = self
        data = a.data ** p

        def backward(g):
            if a.requires_grad:
                a._accum(g * p * a.data ** (p - 1))

        return Tensor._from_op(data, (a,), backward, "pow")

    # -- elementwise transcendentals -----------------------------------------

    def exp(self):
        a = self
        data = np.exp(a.data)

        def backward(g):
            if a.requires_grad:
                a._accum(g * data)

        return Tensor._from_op(data, (a,), backward, "exp")

    def expm1(self):
        a = self
        data = np.expm1(a.data)

        def backward(g):
            if a.requires_grad:
                a._accum(g * np.exp(a.data))

        return Tensor._from_op(data, (a,), backward, "expm1")

    def log(self):
        a = self
        data = np.log(a.data)

        def backward(g):
            if a.requires_grad:
                a._accum(g / a.data)

        return Tensor._from_op(data, (a,), backward, "log")

    def sigmoid(self):
        a = self
        # numerically stable logistic
        data = np.where(a.data >= 0,
                        1.0 / (1.0 + np.exp(-np.abs(a.data))),
                        np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

        def backward(g):
            if a.requires_grad:
                a._accum(g * data * (1.0 - data))

        return Tensor._from_op(data, (a,), backward, "sigmoid")

    def softplus(self):
        a = self
        data = np.logaddexp(np.zeros((), dtype=a.dtype), a.data)

        def backward(g):
            if a.requires_grad:
                s = 1.0 / (1.0 + np.exp(-a.data.astype(np.float64)))
                a._accum((g * s).astype(a.data.dtype, copy=False))

        return Tensor._from_op(data, (a,), backward, "softplus")

    def silu(self):
        a = self
        x = a.data
        s = np.where(x >= 0,
                     1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        data = x * s

        def backward(g):
            if a.requires_grad:
                a._accum(g * (s + x * s * (1.0 - s)))

        return Tensor._from_op(data, (a,), backward, "silu")

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if not a.requires_grad:
                return
            if axis is None:
                a._accum(np.broadcast_to(g, a.shape).copy())
            else:
                gg = g
                if not keepdims:
                    gg = np.expand_dims(gg, axis)
                a._accum(np.broadcast_to(gg, a.shape).copy())

        return Tensor._from_op(np.asarray(data), (a,), backward, "sum")

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- linear algebra ---------------------------------------------------------

    def matmul(self, other):
        other = Tensor._coerce(other)
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(
                f"matmul requires (m,k) x (k,n); got {a.shape} and {b.shape}"
            )
        data = a.data @ b.data

        def backward(g):
            if a.requires_grad:
                a._accum(g @ b.data.T)
            if b.requires_grad:
                b._accum(a.data.T @ g)

        return Tensor._from_op(data, (a, b), backward, "matmul")

    __matmul__ = matmul

    # -- structural ops ----------------------------------------------------------

    def permute_axes(self, perm):
        a = self
        perm = tuple(int(p) for p in perm)
        if sorted(perm) != list(range(a.ndim)):
            raise ContractError(f"invalid axis permutation {perm} for rank {a.ndim}")
        inv = tuple(np.argsort(perm))

        def backward(g):
            if a.requires_grad:
                a._accum(g.transpose(inv))

        return Tensor._from_op(a.data.transpose(perm), (a,), backward, "permute_axes")

    def reshape(self, shape):
        a = self
        try:
            data = a.data.reshape(shape)
        except ValueError:
            raise ContractError(f"cannot reshape {a.shape} to {shape}")

        def backward(g):
            if a.requires_grad:
                a._accum(g.reshape(a.shape))

        return Tensor._from_op(data, (a,), backward, "reshape")

    def flip(self, axis=0):
        a = self

        def backward(g):
            if a.requires_grad:
                a._accum(np.flip(g, axis=axis))

        return Tensor._from_op(np.flip(a.data, axis=axis).copy(), (a,), backward, "flip")

    def log_softmax(self, axis=-1):
        a = self
        m = a.data.max(axis=axis, keepdims=True)
        shifted = a.data - m
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        data = shifted - lse

        def backward(g):
            if a.requires_grad:
                p = np.exp(data)
                a._accum(g - p * g.sum(axis=axis, keepdims=True))

        return Tensor._from_op(data, (a,), backward, "log_softmax")


# -- free functions -------------------------------------------------------------


def concat(tensors, axis=0):
    tensors = [Tensor._coerce(t) for t in tensors]
    shapes = [t.shape for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"cannot concatenate shapes {shapes} along axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accum(g[tuple(idx)])

    return Tensor._from_op(data, tuple(tensors), backward, "concat")


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    y = xc * ((var + eps) ** -0.5)
    if gain is not None:
        y = y * gain
    if bias is not None:
        y = y + bias
    return y


_ELEMENTWISE = {
    "add": lambda a, b: a + b,
    "mul": lambda a, b: a * b,
    "exp": lambda a: a.exp(),
    "softplus": lambda a: a.softplus(),
    "silu": lambda a: a.silu(),
    "reciprocal": lambda a: a.reciprocal(),
    "neg": lambda a: -a,
}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch table for the named element-wise operations."""
    if op not in _ELEMENTWISE:
        raise ContractError(f"unknown elementwise op '{op}'")
    return _ELEMENTWISE[op](*[Tensor._coerce(a) for a in args])
