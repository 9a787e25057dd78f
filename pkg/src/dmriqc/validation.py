"""Input validation helpers shared by the estimator-style classes."""

from __future__ import annotations

import numpy as np


def check_pixels(pixels, name: str = "pixels") -> np.ndarray:
    """Validate a single 2D finite float slice."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 2 or min(arr.shape) < 1:
        raise ValueError(f"{name}: expected a non-empty 2D array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def check_slice_list(X, name: str = "X") -> list[np.ndarray]:
    """Validate a sequence of 2D slices (shapes may differ per slice)."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        return [check_pixels(x, name) for x in X]
    if isinstance(X, np.ndarray) and X.ndim == 2:
        raise ValueError(f"{name}: expected a sequence of 2D slices, got one 2D array")
    out = [check_pixels(x, name) for x in X]
    if not out:
        raise ValueError(f"{name}: empty input")
    return out


def check_binary_labels(y, n: int | None = None, name: str = "y") -> np.ndarray:
    """Validate 0/1 labels, optionally matching a sample count."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError(f"{name}: expected 1D labels, got shape {arr.shape}")
    if n is not None and len(arr) != n:
        raise ValueError(f"{name}: {len(arr)} labels for {n} samples")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name}: labels must be 0 or 1")
    return arr.astype(int)


def check_feature_matrix(X, name: str = "X") -> np.ndarray:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name}: expected a 2D feature matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name}: contains non-finite values")
    return arr
