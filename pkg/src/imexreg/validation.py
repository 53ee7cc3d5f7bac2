"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

import numpy as np


def check_matrix(x, name: str = "X", expected_dim: int | None = None) -> np.ndarray:
    """Coerce to a finite float64 2-d array, raising informative ValueErrors."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {x.shape}")
    if x.shape[0] == 0:
        raise ValueError(f"{name} must contain at least one sample")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains NaN or Inf")
    if expected_dim is not None and x.shape[1] != expected_dim:
        raise ValueError(f"{name} has {x.shape[1]} features, expected {expected_dim}")
    return x


def check_labels(y, n_samples: int, num_classes: int | None = None,
                 name: str = "y") -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ValueError(f"{name} must be 1-d with {n_samples} entries, got shape {y.shape}")
    if y.dtype.kind == "f":
        if not np.all(y == np.floor(y)):
            raise ValueError(f"{name} must hold integer class ids")
        y = y.astype(np.int64)
    elif y.dtype.kind not in "iu":
        raise ValueError(f"{name} must hold integer class ids, got dtype {y.dtype}")
    y = y.astype(np.int64)
    if y.min() < 0:
        raise ValueError(f"{name} contains negative class ids")
    if num_classes is not None and y.max() >= num_classes:
        raise ValueError(f"{name} contains class {y.max()}, expected ids in [0, {num_classes})")
    return y
