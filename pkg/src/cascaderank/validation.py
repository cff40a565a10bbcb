"""Input validation helpers, in the spirit of sklearn's check_array.

All helpers return float64 numpy arrays and reject NaN/Inf up front so the
numeric kernels can assume clean inputs.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch


def check_vector(x, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionMismatch(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array with at least one row and column."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatch(f"{name} must have at least one row and column")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_square(x, dim: int | None = None, name: str = "weights") -> np.ndarray:
    """Coerce to a finite square matrix, optionally of a required dimension."""
    arr = check_matrix(x, name=name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionMismatch(
            f"{name} must be {dim}x{dim} to match feature dimension, got shape {arr.shape}"
        )
    return arr


def check_same_dim(a: np.ndarray, b: np.ndarray, name_a: str = "a", name_b: str = "b") -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DimensionMismatch(
            f"{name_a} has dimension {a.shape[-1]} but {name_b} has {b.shape[-1]}"
        )


def check_unit_interval(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_positive_int(value, name: str) -> int:
    ivalue = int(value)
    if ivalue != value or ivalue < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return ivalue
