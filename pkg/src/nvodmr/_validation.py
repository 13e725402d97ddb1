"""Input checks shared by the estimators and pipeline functions."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_frequencies(X) -> np.ndarray:
    """Accept frequencies as a 1-D array or a single-column 2-D array."""
    arr = check_array(X, ensure_2d=False, dtype=np.float64)
    if arr.ndim == 2:
        if arr.shape[1] != 1:
            raise ValueError(
                f"expected frequencies as a single column, got shape {arr.shape}"
            )
        arr = arr[:, 0]
    return arr


def check_spectrum_arrays(X, y, min_points: int = 2):
    """Validate a frequency/signal pair and return both sorted by frequency.

    ``y`` may be ``None`` when only frequencies are needed.
    """
    f = check_frequencies(X)
    if f.size < min_points:
        raise ValueError(f"spectrum needs at least {min_points} points, got {f.size}")
    if y is None:
        return f, None
    values = check_array(y, ensure_2d=False, dtype=np.float64).ravel()
    if values.shape != f.shape:
        raise ValueError(
            f"frequencies and signal differ in length ({f.size} vs {values.size})"
        )
    order = np.argsort(f, kind="stable")
    if np.any(order != np.arange(f.size)):
        f, values = f[order], values[order]
    return f, values
