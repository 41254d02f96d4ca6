"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Every value is a float64 ``Tensor2``. Operations executed while a ``Tape`` is
active are recorded together with a vector-Jacobian rule; ``Tape.gradient``
replays the records backwards. Tensors are immutable, a tape belongs to the
thread that opened it.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError, NumericalError, ShapeError

_local = threading.local()


class Tensor2:
    """Immutable row-major real matrix."""

    __slots__ = ("_data",)

    def __init__(self, data) -> None:
        arr = np.array(data, dtype=np.float64, copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"Tensor2 needs at most 2 dimensions, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite entries in tensor of shape {arr.shape}")
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor2":
        # ops already produce fresh arrays
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite entries in tensor of shape {arr.shape}")
        t = cls.__new__(cls)
        arr.setflags(write=False)
        t._data = arr
        return t

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, int]:
        return self._data.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return self._data.shape[0]

    @property
    def cols(self) -> int:
        return self._data.shape[1]

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self._data[0, 0])

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        return f"Tensor2(shape={self.shape})"

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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor2":
        return transpose(self)


@dataclass(frozen=True)
class _Record:
    inputs: tuple[Tensor2, ...]
    output: Tensor2
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of the primitive operations of one forward pass."""

    def __init__(self) -> None:
        self.records: list[_Record] = []
        self._outer: Tape | None = None

    def __enter__(self) -> "Tape":
        self._outer = active_tape()
        _local.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _local.tape = self._outer
        self._outer = None

    def __len__(self) -> int:
        return len(self.records)

    def record(self, inputs: tuple[Tensor2, ...], output: Tensor2, vjp) -> None:
        self.records.append(_Record(inputs, output, vjp))

    def gradient(self, output: Tensor2, leaves: Iterable[Tensor2]) -> list[np.ndarray]:
        """d(output)/d(leaf) for every leaf; leaves off every path get exact zeros."""
        if output.shape != (1, 1):
            raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
        grads: dict[int, np.ndarray] = {id(output): np.ones((1, 1))}
        for rec in reversed(self.records):
            g = grads.get(id(rec.output))
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.vjp(g)):
                if gi is None:
                    continue
                key = id(inp)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
        # the output itself may be a leaf (f(w) = w)
        out: list[np.ndarray] = []
        for leaf in leaves:
            g = grads.get(id(leaf))
            out.append(np.zeros(leaf.shape) if g is None else np.array(g, dtype=np.float64))
        return out


def active_tape() -> Tape | None:
    return getattr(_local, "tape", None)


def backward(tape: Tape, output: Tensor2, leaves: Sequence[Tensor2]) -> list[np.ndarray]:
    return tape.gradient(output, leaves)


def as_tensor(x) -> Tensor2:
    return x if isinstance(x, Tensor2) else Tensor2(x)


def _emit(value: np.ndarray, inputs: tuple[Tensor2, ...], vjp) -> Tensor2:
    out = Tensor2._wrap(np.asarray(value, dtype=np.float64))
    tape = active_tape()
    if tape is not None:
        tape.record(inputs, out, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor2, b: Tensor2) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------

def matmul(a, b) -> Tensor2:
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return _emit(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a, b) -> Tensor2:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor2:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor2:
    """Elementwise product with row/column broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    A, B = a.data, b.data
    return _emit(A * B, (a, b),
                 lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)))


def scale(a, c: float) -> Tensor2:
    a = as_tensor(a)
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def transpose(a) -> Tensor2:
    a = as_tensor(a)
    return _emit(a.data.T.copy(), (a,), lambda g: (g.T,))


def tanh(a) -> Tensor2:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _emit(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a) -> Tensor2:
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)
    return _emit(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a) -> Tensor2:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _emit(y, (a,), lambda g: (g * y,))


def total(a) -> Tensor2:
    """Sum of all entries as a 1x1 tensor."""
    a = as_tensor(a)
    shape = a.shape
    return _emit(np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def concat_cols(parts: Sequence) -> Tensor2:
    ts = tuple(t for t in (as_tensor(p) for p in parts) if t.cols > 0)
    if not ts:
        raise ContractError("concat_cols needs at least one non-empty block")
    rows = {t.rows for t in ts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {[t.shape for t in ts]}")
    bounds = np.cumsum([0] + [t.cols for t in ts])

    def vjp(g):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(ts)))

    return _emit(np.concatenate([t.data for t in ts], axis=1), ts, vjp)


def sqdist(a, b) -> Tensor2:
    """Pairwise squared Euclidean distances, shape (a.rows, b.rows)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.cols:
        raise ShapeError(f"sqdist: feature dims differ {a.shape} vs {b.shape}")
    A, B = a.data, b.data
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    d = np.maximum(d, 0.0)

    def vjp(g):
        ga = 2.0 * (g.sum(1)[:, None] * A - g @ B)
        gb = 2.0 * (g.sum(0)[:, None] * B - g.T @ A)
        return ga, gb

    return _emit(d, (a, b), vjp)


ACTIVATIONS: dict[str, Callable[[Tensor2], Tensor2]] = {
    "tanh": tanh,
    "relu": relu,
    "identity": lambda t: t,
}


# --------------------------------------------------------------------------
# checking helpers
# --------------------------------------------------------------------------

def finite_difference(fn: Callable[[list[np.ndarray]], float], params: list[np.ndarray],
                      step: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of a scalar function of several arrays."""
    grads = []
    for k, p in enumerate(params):
        g = np.zeros_like(p, dtype=np.float64)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += step
            minus[k][idx] -= step
            g[idx] = (fn(plus) - fn(minus)) / (2.0 * step)
        grads.append(g)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
