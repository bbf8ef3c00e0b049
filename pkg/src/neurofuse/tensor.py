"""Dense tensor carrier and the validated core operations.

Tensors throughout the package are float32, C-contiguous (row-major,
last index fastest) numpy arrays of rank 1..6. Construction goes through
the helpers here so shape and value contracts are enforced in one place;
layers and models operate on the returned arrays directly.

Operations return new arrays; nothing here mutates its inputs. Optional
debug checks reject NaN/Inf at operation boundaries (off by default, see
``set_debug_checks``).
"""

import math

import numpy as np

from .errors import ShapeError

Tensor = np.ndarray
Shape = tuple[int, ...]

MAX_RANK = 6

_debug_checks = False


def set_debug_checks(enabled):
    """Toggle NaN/Inf validation of operation results (slow; default off)."""
    global _debug_checks
    _debug_checks = bool(enabled)


def _validated(t):
    if _debug_checks and not np.all(np.isfinite(t)):
        raise ShapeError("tensor contains non-finite values")
    return t


def validate_shape(dims):
    """Return dims as a tuple, rejecting invalid extents.

    Extents must be positive integers, rank 1..MAX_RANK, and the element
    count must fit in an unsigned 64-bit integer.
    """
    dims = tuple(int(d) for d in dims)
    if not 1 <= len(dims) <= MAX_RANK:
        raise ShapeError(f"rank must be 1..{MAX_RANK}, got {len(dims)}")
    if any(d < 1 for d in dims):
        raise ShapeError(f"every extent must be >= 1, got {dims}")
    if math.prod(dims) >= 2**64:
        raise ShapeError(f"element count of {dims} overflows 64 bits")
    return dims


def element_count(shape):
    return math.prod(validate_shape(shape))


def full(shape, fill):
    """New tensor with every element equal to fill."""
    shape = validate_shape(shape)
    return _validated(np.full(shape, fill, dtype=np.float32))


def zeros(shape):
    return full(shape, 0.0)


def as_tensor(values, shape=None):
    """Coerce values to a float32 row-major tensor, optionally reshaped."""
    t = np.ascontiguousarray(values, dtype=np.float32)
    if shape is not None:
        t = reshape(t, shape)
    validate_shape(t.shape)
    return _validated(t)


def elementwise(op, a, b):
    """Apply add/sub/mul elementwise to two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {op}: shapes {a.shape} and {b.shape} differ")
    if op == "add":
        out = a + b
    elif op == "sub":
        out = a - b
    elif op == "mul":
        out = a * b
    else:
        raise ValueError(f"unknown elementwise op {op!r}")
    return _validated(out)


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def mul(a, b):
    return elementwise("mul", a, b)


def matmul(a, b):
    """Matrix product of two rank-2 tensors with matching inner extents."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return _validated(a @ b)


def reshape(t, new_shape):
    """Same flat data under a new shape (element counts must match)."""
    new_shape = validate_shape(new_shape)
    if math.prod(new_shape) != t.size:
        raise ShapeError(f"cannot reshape {t.size} elements to {new_shape}")
    return np.ascontiguousarray(t).reshape(new_shape)


def flatten(t):
    return reshape(t, (t.size,))
