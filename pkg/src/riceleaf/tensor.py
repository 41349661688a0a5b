"""Dense n-dimensional float tensors and the primitives layers are built from.

Tensors are immutable values: the wrapped numpy buffer is marked read-only,
so any tensor can be shared across threads. Arithmetic stays in the tensor's
declared precision (float32 by default, float64 for gradient checks).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError

SINGLE = np.dtype(np.float32)
DOUBLE = np.dtype(np.float64)

_PRECISIONS = {"single": SINGLE, "double": DOUBLE}


def resolve_dtype(precision) -> np.dtype:
    """Map 'single'/'double' (or a numpy float dtype) to the storage dtype."""
    if isinstance(precision, str):
        try:
            return _PRECISIONS[precision]
        except KeyError:
            raise ShapeError(f"unknown precision {precision!r}; expected 'single' or 'double'")
    dt = np.dtype(precision)
    if dt not in (SINGLE, DOUBLE):
        raise ShapeError(f"unsupported dtype {dt}; tensors are float32 or float64")
    return dt


class Tensor:
    """An immutable n-d float array: a shape plus row-major flat data."""

    __slots__ = ("_a",)

    def __init__(self, values, dtype=SINGLE):
        dt = resolve_dtype(dtype)
        a = np.array(values, dtype=dt, order="C")
        if a.ndim == 0:
            a = a.reshape(1)
        if any(n < 1 for n in a.shape):
            raise ShapeError(f"tensor dimensions must be >= 1, got {a.shape}")
        a.setflags(write=False)
        self._a = a

    @classmethod
    def wrap(cls, array: np.ndarray) -> "Tensor":
        """Adopt an ndarray without copying. The caller must not mutate it."""
        t = object.__new__(cls)
        if array.dtype not in (SINGLE, DOUBLE):
            array = array.astype(SINGLE)
        if not array.flags["C_CONTIGUOUS"]:
            array = np.ascontiguousarray(array)
        if array.ndim == 0:
            array = array.reshape(1)
        array.setflags(write=False)
        t._a = array
        return t

    @property
    def shape(self) -> tuple:
        return self._a.shape

    @property
    def dtype(self) -> np.dtype:
        return self._a.dtype

    @property
    def size(self) -> int:
        return self._a.size

    @property
    def array(self) -> np.ndarray:
        """Read-only ndarray view of the tensor."""
        return self._a

    def astype(self, dtype) -> "Tensor":
        dt = resolve_dtype(dtype)
        if dt == self._a.dtype:
            return self
        return Tensor.wrap(self._a.astype(dt))

    def tolist(self):
        return self._a.tolist()

    def item(self) -> float:
        return float(self._a.reshape(-1)[0]) if self._a.size == 1 else self._a.item()

    def tobytes(self) -> bytes:
        return self._a.tobytes(order="C")

    def __len__(self) -> int:
        return self._a.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._a, other._a)

    def __hash__(self):
        return hash((self.shape, self._a.tobytes()))

    def __repr__(self):
        return f"Tensor(shape={list(self.shape)}, dtype={self._a.dtype.name})"


def zeros(shape, dtype=SINGLE) -> Tensor:
    return Tensor.wrap(np.zeros(shape, dtype=resolve_dtype(dtype)))


def full(shape, value, dtype=SINGLE) -> Tensor:
    return Tensor.wrap(np.full(shape, value, dtype=resolve_dtype(dtype)))


def eye(n, dtype=SINGLE) -> Tensor:
    return Tensor.wrap(np.eye(n, dtype=resolve_dtype(dtype)))


def _binary_check(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} differ")
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: precisions {a.dtype.name} and {b.dtype.name} differ")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Rank-2 matrix product: c[i,j] = sum_k a[i,k] * b[k,j]."""
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {list(a.shape)} x {list(b.shape)}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {list(a.shape)} x {list(b.shape)}")
    if a.dtype != b.dtype:
        raise ShapeError(f"matmul: precisions {a.dtype.name} and {b.dtype.name} differ")
    return Tensor.wrap(a.array @ b.array)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Pointwise sum. The one allowed broadcast: a rank-1 bias row added to
    every row of a rank-2 tensor."""
    if len(a.shape) == 2 and len(b.shape) == 1 and a.shape[1] == b.shape[0]:
        if a.dtype != b.dtype:
            raise ShapeError(f"add: precisions {a.dtype.name} and {b.dtype.name} differ")
        return Tensor.wrap(a.array + b.array)
    _binary_check("add", a, b)
    return Tensor.wrap(a.array + b.array)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_check("sub", a, b)
    return Tensor.wrap(a.array - b.array)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_check("mul", a, b)
    return Tensor.wrap(a.array * b.array)


def scale(a: Tensor, c: float) -> Tensor:
    if not math.isfinite(c):
        raise ShapeError(f"scale: constant {c!r} is not finite")
    return Tensor.wrap(a.array * a.dtype.type(c))


def map_unary(a: Tensor, fn) -> Tensor:
    """Apply a vectorised unary function (e.g. np.exp) elementwise."""
    out = np.asarray(fn(a.array), dtype=a.dtype)
    if out.shape != a.shape:
        raise ShapeError(f"map_unary: fn changed shape {list(a.shape)} -> {list(out.shape)}")
    return Tensor.wrap(out)


def reshape(a: Tensor, new_shape) -> Tensor:
    new_shape = tuple(int(n) for n in new_shape)
    if any(n < 1 for n in new_shape):
        raise ShapeError(f"reshape: dimensions must be >= 1, got {list(new_shape)}")
    count = math.prod(new_shape)
    if count != a.size:
        raise ShapeError(
            f"reshape: cannot view {a.size} elements (shape {list(a.shape)}) "
            f"as {list(new_shape)} ({count} elements)"
        )
    return Tensor.wrap(a.array.reshape(new_shape))
