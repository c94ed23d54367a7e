"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Just enough machinery to train small multilayer denoisers: dense 2-D
matmul, broadcasting elementwise arithmetic, silu/tanh nonlinearities,
an embedding-table lookup, concatenation, and reductions.  Every Tensor
remembers the inputs that produced it together with a vector-Jacobian
closure; ``backward`` replays that tape in reverse topological order and
accumulates gradients into the leaves.

Training is single-threaded per job: tapes are plain Python state with
no locking, and a tape must be consumed by ``backward`` before the
optimizer mutates the parameters it references.  Frozen model evaluation
does not go through this module at all (it is plain numpy), so concurrent
inference on fixed parameters is safe.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class NonFiniteValue(RuntimeError):
    """A loss or gradient stopped being finite."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` over the axes numpy broadcasting introduced for `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A float64 array plus the tape entry that produced it."""

    __slots__ = ("data", "grad", "_parents", "_vjp")

    def __init__(self, data, _parents=(), _vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(astensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(astensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(astensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, seed_grad=None):
        backward(self, seed_grad)


def astensor(x) -> Tensor:
    """Wrap a constant as a leaf Tensor (no-op on Tensors)."""
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out_data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out_data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out_data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(out_data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out_data = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(out_data, (a, b), vjp)


def neg(a) -> Tensor:
    a = astensor(a)
    return Tensor(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """2-D @ 2-D matrix product (the only shape the models need)."""
    a, b = astensor(a), astensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    out_data = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(out_data, (a, b), vjp)


def silu(a) -> Tensor:
    """x * sigmoid(x); derivative s * (1 + x * (1 - s))."""
    a = astensor(a)
    s = expit(a.data)
    out_data = a.data * s

    def vjp(g):
        return (g * (s * (1.0 + a.data * (1.0 - s))),)

    return Tensor(out_data, (a,), vjp)


def tanh(a) -> Tensor:
    a = astensor(a)
    y = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - y * y),)

    return Tensor(y, (a,), vjp)


def concat(parts, axis: int = 1) -> Tensor:
    parts = [astensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out_data, tuple(parts), vjp)


def embedding(table, index: np.ndarray) -> Tensor:
    """Row lookup into a (rows, width) table; gradient scatter-adds by index."""
    table = astensor(table)
    index = np.asarray(index)
    if not np.issubdtype(index.dtype, np.integer):
        raise ValueError("embedding index must be an integer array")
    out_data = table.data[index]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, index, g)
        return (gt,)

    return Tensor(out_data, (table,), vjp)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = astensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(out_data, (a,), vjp)


def mean(a) -> Tensor:
    """Mean over all elements, producing a scalar loss."""
    a = astensor(a)
    n = a.size

    def vjp(g):
        return (np.broadcast_to(np.asarray(g) / n, a.shape).copy(),)

    return Tensor(a.data.mean(), (a,), vjp)


def _topo_order(root: Tensor) -> list:
    """Parents-before-children ordering of the tape below `root`."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(output: Tensor, seed_grad=None) -> None:
    """Accumulate d(output)/d(leaf) into every leaf's .grad slot.

    seed_grad defaults to ones of the output's shape (i.e. for a scalar
    loss, plain gradients).
    """
    if seed_grad is None:
        seed = np.ones_like(output.data)
    else:
        seed = np.asarray(seed_grad, dtype=np.float64)
        if seed.shape != output.data.shape:
            raise ValueError("seed_grad shape must match the differentiated output")
    output.grad = seed if output.grad is None else output.grad + seed
    for node in reversed(_topo_order(output)):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            parent.grad = g if parent.grad is None else parent.grad + g


class ParamStore:
    """Ordered map from parameter name to Tensor, with gradient slots.

    Names are unique; insertion order is the serialization order.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(value, dtype=np.float64))
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    @property
    def n_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def arrays(self) -> dict:
        """Copy out all parameter values, keyed by name."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def load(self, arrays: dict, strict: bool = True) -> None:
        """Bitwise-copy values in; shapes must match on shared names."""
        for name, t in self._params.items():
            if name not in arrays:
                if strict:
                    raise KeyError(f"missing parameter {name!r}")
                continue
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: {value.shape} vs {t.data.shape}"
                )
            t.data = value.copy()
        if strict:
            extra = set(arrays) - set(self._params)
            if extra:
                raise KeyError(f"unknown parameters: {sorted(extra)}")

    def copy(self) -> "ParamStore":
        dup = ParamStore()
        for name, t in self._params.items():
            dup.add(name, t.data)
        return dup
