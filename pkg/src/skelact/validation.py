"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def as_float_array(x, name: str = "array") -> np.ndarray:
    """Coerce to a float64 ndarray and reject non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_motion_array(x, name: str = "X") -> np.ndarray:
    """Validate a stacked motion array of shape (n_samples, T, N, C)."""
    arr = as_float_array(x, name)
    if arr.ndim != 4:
        raise ValueError(
            f"{name} must have shape (n_samples, frames, joints, channels); got {arr.shape}"
        )
    if min(arr.shape) < 1:
        raise ValueError(f"{name} has an empty dimension: {arr.shape}")
    return arr


def check_labels(y, n_samples: int | None = None, num_classes: int | None = None) -> np.ndarray:
    """Validate integer class labels, optionally against a sample count and range."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError(f"labels must be 1-D; got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        rounded = np.rint(np.asarray(arr, dtype=np.float64))
        if not np.array_equal(rounded, np.asarray(arr, dtype=np.float64)):
            raise ValueError("labels must be integers")
        arr = rounded
    arr = arr.astype(np.int64, copy=False)
    if n_samples is not None and arr.shape[0] != n_samples:
        raise ValueError(f"expected {n_samples} labels, got {arr.shape[0]}")
    if num_classes is not None and arr.size:
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValueError(
                f"labels must lie in [0, {num_classes}); got range "
                f"[{arr.min()}, {arr.max()}]"
            )
    return arr


def check_square(a, name: str = "matrix") -> np.ndarray:
    arr = as_float_array(a, name)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square; got shape {arr.shape}")
    return arr


def check_symmetric(a, name: str = "matrix", tol: float = 0.0) -> np.ndarray:
    arr = check_square(a, name)
    if tol == 0.0:
        ok = np.array_equal(arr, arr.T)
    else:
        ok = np.allclose(arr, arr.T, atol=tol, rtol=0.0)
    if not ok:
        raise ValueError(f"{name} must be symmetric")
    return arr


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be a positive finite number; got {value!r}")
    return value
