"""Input validation helpers shared by the estimators and module functions."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array


def check_positive(value, name: str, *, allow_zero: bool = False) -> float:
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not np.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be finite and {bound}, got {value}")
    return value


def check_positive_int(value, name: str, *, minimum: int = 1) -> int:
    if not isinstance(value, numbers.Integral) or isinstance(value, bool):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_finite_array(a, *, ensure_2d: bool = False) -> np.ndarray:
    """Float64 array with every entry finite; 1-D allowed unless ``ensure_2d``."""
    arr = np.asarray(a, dtype=np.float64)
    if ensure_2d and arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return check_array(arr, ensure_2d=ensure_2d or arr.ndim == 2, dtype=np.float64,
                       allow_nd=False, ensure_all_finite=True)


def check_inputs(dataset):
    """Split a dataset into ``(X, Y)`` arrays.

    A ``tuple`` is read as ``(X, Y)``; any other iterable as a sequence of
    ``(x, y)`` samples.
    """
    if isinstance(dataset, tuple):
        if len(dataset) != 2:
            raise ValueError("a tuple dataset must be (X, Y)")
        X, Y = dataset
    else:
        pairs = list(dataset)
        if not pairs:
            raise ValueError("dataset is empty")
        X = [p[0] for p in pairs]
        Y = [p[1] for p in pairs]
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim == 0 or X.shape[0] == 0:
        raise ValueError("dataset is empty")
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} samples but Y has {Y.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("dataset contains NaN or Inf")
    return X, Y
