"""Input validation helpers, in the spirit of sklearn's check_array.

Every public operation funnels its array arguments through these so that
shape and finiteness errors carry the argument name instead of a bare
numpy traceback.
"""

from __future__ import annotations

import numpy as np


def as_float_array(x, name: str, shape: tuple | None = None) -> np.ndarray:
    """Coerce to a float64 ndarray, optionally enforcing a shape.

    A ``-1`` entry in `shape` matches any extent along that axis.
    """
    arr = np.asarray(x, dtype=np.float64)
    if shape is not None:
        if arr.ndim != len(shape):
            raise ValueError(
                f"{name}: expected {len(shape)} dims {shape}, got shape {arr.shape}"
            )
        for axis, want in enumerate(shape):
            if want != -1 and arr.shape[axis] != want:
                raise ValueError(
                    f"{name}: expected shape {shape}, got {arr.shape}"
                )
    return arr


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_lengths_match(name_a: str, a, name_b: str, b) -> None:
    if len(a) != len(b):
        raise ValueError(
            f"{name_a} (len {len(a)}) and {name_b} (len {len(b)}) must match"
        )


def check_unit_rows(arr: np.ndarray, name: str, atol: float = 1e-6) -> np.ndarray:
    norms = np.linalg.norm(arr, axis=-1)
    if not np.allclose(norms, 1.0, atol=atol):
        worst = float(np.abs(norms - 1.0).max())
        raise ValueError(f"{name} rows must be unit-norm (worst deviation {worst:.3g})")
    return arr


def check_open_unit_interval(arr: np.ndarray, name: str) -> np.ndarray:
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError(f"{name} values must lie strictly inside (0, 1)")
    return arr


def check_positive(value, name: str):
    if not np.all(np.asarray(value) > 0):
        raise ValueError(f"{name} must be positive")
    return value
