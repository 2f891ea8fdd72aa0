"""Dense tensors with reverse-mode automatic differentiation.

A small numpy-backed autodiff engine: every op builds a node in a DAG and
records a closure that scatters the upstream gradient to its parents.
Training paths run in float32; oracles and gradient checks can request
float64 by constructing tensors with ``dtype=np.float64``.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "add",
    "mul",
    "matmul",
    "reshape",
    "transpose",
    "concat",
    "reduce_sum",
    "reduce_mean",
    "softmax",
    "log_softmax",
    "layer_norm",
    "gelu",
    "cosine_similarity",
    "reset_mac_count",
    "mac_count",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""

    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {', '.join(str(tuple(s)) for s in shapes)}")
        self.op = op
        self.shapes = shapes


# global multiply-accumulate counter, used by scaling property tests
_MAC_COUNT = 0


def reset_mac_count() -> None:
    global _MAC_COUNT
    _MAC_COUNT = 0


def mac_count() -> int:
    return _MAC_COUNT


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self._op = "leaf"
        self.name = name

    # ---- construction helpers -------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: tuple, backward, op: str) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = parents if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        out._op = op
        out.name = ""
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    # ---- autodiff --------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar; visits each node exactly once."""
        if self.data.size != 1:
            raise ShapeError("backward", self.shape)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # ---- arithmetic ------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        return add(self, self._coerce(other))

    def __radd__(self, other):
        return add(self._coerce(other), self)

    def __sub__(self, other):
        other = self._coerce(other)
        return add(self, -other)

    def __rsub__(self, other):
        return add(self._coerce(other), -self)

    def __mul__(self, other):
        return mul(self, self._coerce(other))

    def __rmul__(self, other):
        return mul(self._coerce(other), self)

    def __truediv__(self, other):
        other = self._coerce(other)
        return mul(self, other ** -1.0)

    def __rtruediv__(self, other):
        return mul(self._coerce(other), self ** -1.0)

    def __neg__(self):
        data = -self.data

        def bwd(g):
            self._accumulate(-g)

        return Tensor._make(data, (self,), bwd, "neg")

    def __pow__(self, exponent: float):
        e = float(exponent)
        data = self.data ** e

        def bwd(g):
            self._accumulate(g * e * self.data ** (e - 1.0))

        return Tensor._make(data, (self,), bwd, "pow")

    def __matmul__(self, other):
        return matmul(self, self._coerce(other))

    def __getitem__(self, idx):
        data = self.data[idx]

        def bwd(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accumulate(full)

        return Tensor._make(data, (self,), bwd, "getitem")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, grad={'set' if self.grad is not None else 'none'})"

    # ---- elementwise math ------------------------------------------------

    def exp(self):
        data = np.exp(self.data)

        def bwd(g):
            self._accumulate(g * data)

        return Tensor._make(data, (self,), bwd, "exp")

    def log(self):
        data = np.log(self.data)

        def bwd(g):
            self._accumulate(g / self.data)

        return Tensor._make(data, (self,), bwd, "log")

    def tanh(self):
        data = np.tanh(self.data)

        def bwd(g):
            self._accumulate(g * (1.0 - data * data))

        return Tensor._make(data, (self,), bwd, "tanh")

    def sin(self):
        data = np.sin(self.data)

        def bwd(g):
            self._accumulate(g * np.cos(self.data))

        return Tensor._make(data, (self,), bwd, "sin")

    def cos(self):
        data = np.cos(self.data)

        def bwd(g):
            self._accumulate(g * -np.sin(self.data))

        return Tensor._make(data, (self,), bwd, "cos")

    def sqrt(self):
        return self ** 0.5

    def clip_min(self, floor: float):
        """Lower clamp; gradient passes only where the input is above the floor."""
        data = np.maximum(self.data, floor)

        def bwd(g):
            self._accumulate(g * (self.data > floor))

        return Tensor._make(data, (self,), bwd, "clip_min")

    # ---- shape ops -------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


# ---- binary ops ----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor._make(data, (a, b), bwd, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor._make(data, (a, b), bwd, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    global _MAC_COUNT
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        if a.ndim == 2 and b.ndim == 2:
            # per-row kernel: bitwise identical results regardless of how
            # many rows are in the batch (plain gemm reblocks by M)
            data = np.matmul(a.data[:, None, :], b.data)[:, 0, :]
        else:
            data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None
    # multiply-accumulate count: product of output extents times inner dim
    _MAC_COUNT += int(np.prod(data.shape)) * a.shape[-1]

    def bwd(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape))

    return Tensor._make(data, (a, b), bwd, "matmul")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape) if isinstance(shape, (tuple, list)) else (shape,)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None

    def bwd(g):
        x._accumulate(g.reshape(x.shape))

    return Tensor._make(data, (x,), bwd, "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    data = np.transpose(x.data, axes)
    inv = np.argsort(axes)

    def bwd(g):
        x._accumulate(np.transpose(g, inv))

    return Tensor._make(data, (x,), bwd, "transpose")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return Tensor._make(data, tuple(tensors), bwd, "concat")


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape).copy())

    return Tensor._make(np.asarray(data), (x,), bwd, "reduce_sum")


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return reduce_sum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


# ---- composite neural-net ops -------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max subtracted before exponentiation)."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        x._accumulate(data * (g - dot))

    return Tensor._make(data, (x,), bwd, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    p = np.exp(data)

    def bwd(g):
        x._accumulate(g - p * g.sum(axis=axis, keepdims=True))

    return Tensor._make(data, (x,), bwd, "log_softmax")


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis. A constant vector maps to zeros (eps guard)."""
    d = x.shape[-1]
    mu = reduce_mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = reduce_mean(centered * centered, axis=-1, keepdims=True)
    return centered * ((var + eps) ** -0.5)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation gelu (the form recorded in model configs)."""
    inner = (x + (x * x * x) * 0.044715) * _GELU_C
    return x * (inner.tanh() + 1.0) * 0.5


def cosine_similarity(a: Tensor, b: Tensor, axis: int = -1, eps: float = 1e-8) -> Tensor:
    num = reduce_sum(a * b, axis=axis)
    na = (reduce_sum(a * a, axis=axis) + eps) ** 0.5
    nb = (reduce_sum(b * b, axis=axis) + eps) ** 0.5
    return num * (na * nb) ** -1.0
