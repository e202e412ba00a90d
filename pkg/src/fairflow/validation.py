"""Input validation helpers shared by the public functions and estimators."""

import numpy as np
from sklearn.utils.validation import check_array


def check_state(n, n_routes, *, name="n", integer=False):
    """Return ``n`` as a finite nonnegative float vector of length ``n_routes``."""
    arr = np.asarray(n, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != n_routes:
        raise ValueError(f"{name} must be a vector of length {n_routes}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if np.any(arr < 0):
        raise ValueError(f"{name} must be nonnegative")
    if integer and np.any(arr != np.round(arr)):
        raise ValueError(f"{name} must be integer valued")
    return arr


def check_states(X, n_routes, *, name="X"):
    """2-D batch variant of :func:`check_state` built on sklearn's check_array."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, input_name=name)
    if X.shape[1] != n_routes:
        raise ValueError(f"{name} has {X.shape[1]} columns, network has {n_routes} routes")
    if np.any(X < 0):
        raise ValueError(f"{name} must be nonnegative")
    return X


def check_vector(v, length, *, name, nonnegative=True):
    arr = np.asarray(v, dtype=float).ravel()
    if arr.shape[0] != length:
        raise ValueError(f"{name} must have length {length}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if nonnegative and np.any(arr < 0):
        raise ValueError(f"{name} must be nonnegative")
    return arr


def parse_vector(text):
    """Parse ``"1,2.5,3"`` into a float array (CLI helper)."""
    try:
        return np.array([float(tok) for tok in str(text).split(",") if tok.strip()])
    except ValueError:
        raise ValueError(f"cannot parse vector {text!r}") from None
