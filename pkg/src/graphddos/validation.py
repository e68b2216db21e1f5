"""Input validation helpers.

All numeric state in the package is float64. These helpers coerce and check
inputs at module boundaries so the numeric kernels can assume clean arrays.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DimensionError


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a C-contiguous float64 2-D array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def as_vector(x, name: str = "vector") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def as_index_vector(x, name: str = "indices") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.int64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: operand shapes differ, {a.shape} vs {b.shape}")


def check_finite(x: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(x)):
        raise ConfigurationError(f"{name} contains non-finite values")


def check_probability(p: float, name: str = "probability") -> float:
    p = float(p)
    if not (0.0 <= p <= 1.0) or not np.isfinite(p):
        raise ConfigurationError(f"{name} must be in [0, 1], got {p}")
    return p


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not value > 0.0:
        raise ConfigurationError(f"{name} must be > 0, got {value}")
    return value


def check_positive_int(value: int, name: str) -> int:
    value = int(value)
    if value < 1:
        raise ConfigurationError(f"{name} must be >= 1, got {value}")
    return value
