"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numbers

import numpy as np

from .errors import DimensionError, DomainError


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise DomainError(f"{name} must be a finite real number, got {value!r}")
    if (strict and value <= 0) or (not strict and value < 0):
        bound = "> 0" if strict else ">= 0"
        raise DomainError(f"{name} must be {bound}, got {value!r}")
    return float(value)


def check_probability(value, name="probability"):
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {value!r}")
    return value


def check_1d(x, name, length=None, dtype=np.float64):
    """Return ``x`` as a 1-D array, optionally checking its length."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise DimensionError(f"{name} must have {length} entries, got {arr.shape[0]}")
    return arr


def check_2d(x, name, shape=None):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if shape is not None:
        for axis, want in enumerate(shape):
            if want is not None and arr.shape[axis] != want:
                raise DimensionError(
                    f"{name} axis {axis} must have size {want}, got {arr.shape[axis]}"
                )
    return arr


def check_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a, b, names=("a", "b")):
    if np.shape(a) != np.shape(b):
        raise DimensionError(
            f"{names[0]} and {names[1]} differ in shape: {np.shape(a)} vs {np.shape(b)}"
        )


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``.

    Unlike sklearn, ``None`` is refused: every random path here is seeded.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise DomainError("an explicit seed is required")
    return np.random.default_rng(seed)
