"""Input validation helpers shared by the solvers and estimators."""

from __future__ import annotations

import numpy as np

SIMPLEX_ATOL = 1e-12


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


def as_float_array(x, name: str, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValidationError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def check_distribution(x, name: str, atol: float = SIMPLEX_ATOL, axis=None) -> np.ndarray:
    """Nonnegative entries summing to one (over ``axis``, or the whole array)."""
    arr = as_float_array(x, name)
    if np.any(arr < 0):
        raise ValidationError(f"{name} has negative entries")
    total = arr.sum(axis=axis)
    if not np.allclose(total, 1.0, rtol=0.0, atol=atol):
        worst = float(np.max(np.abs(np.asarray(total) - 1.0)))
        raise ValidationError(f"{name} does not sum to 1 (max deviation {worst:.3g})")
    return arr


def check_index(i, size: int, name: str) -> int:
    if not (0 <= int(i) < size) or int(i) != i:
        raise IndexError(f"{name}={i} out of range [0, {size})")
    return int(i)


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape != b.shape:
        raise ValidationError(f"{what} shape mismatch: {a.shape} vs {b.shape}")


def check_unit_interval(x: float, name: str, *, low_open=False, high_open=False) -> float:
    x = float(x)
    lo_ok = x > 0 if low_open else x >= 0
    hi_ok = x < 1 if high_open else x <= 1
    if not (lo_ok and hi_ok):
        lb = "(" if low_open else "["
        rb = ")" if high_open else "]"
        raise ValidationError(f"{name}={x} must lie in {lb}0, 1{rb}")
    return x


def rng_from(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
