"""Nearest-rank quantiles, the single percentile rule used across the package."""

import math

import numpy as np


def nearest_rank_index(q: float, n: int) -> int:
    """0-based index of the nearest-rank q-quantile in a sorted sample of size n."""
    if not 0.0 < q <= 1.0:
        raise ValueError(f"quantile must lie in (0, 1], got {q!r}")
    if n <= 0:
        raise ValueError("nearest-rank quantile of an empty sample")
    # round() absorbs float noise such as 0.99 * 100 = 99.00000000000001
    k = math.ceil(round(q * n, 9))
    return min(max(k, 1), n) - 1


def nearest_rank(values, q: float) -> float:
    """Sorted value at rank ceil(q * n)."""
    arr = np.asarray(values, dtype=float).ravel()
    idx = nearest_rank_index(q, arr.size)
    return float(np.partition(arr, idx)[idx])


def top_fraction_mask(scores, fraction: float) -> np.ndarray:
    """Flag exactly n - rank(1 - fraction) rows with the highest scores.

    Ties at the cut go to the lower row index, so the flagged count never
    depends on how many scores coincide.
    """
    s = np.asarray(scores, dtype=float).ravel()
    n = s.size
    n_flag = n - 1 - nearest_rank_index(1.0 - fraction, n)
    mask = np.zeros(n, dtype=bool)
    if n_flag > 0:
        # stable sort on -s keeps lower indices first among equal scores
        order = np.argsort(-s, kind="stable")
        mask[order[:n_flag]] = True
    return mask
