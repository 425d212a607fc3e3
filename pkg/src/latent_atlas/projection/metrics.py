"""Projection quality measures, all brute force.

trustworthiness is the standard rank-based score: it penalizes low-dimensional
neighbors that were not neighbors in the original space by how far down the
original ranking they sit.

knn_family_purity normalizes each point's same-family neighbor count by the
achievable maximum min(k, family_size - 1), so the score can reach 1.0 even
when families are smaller than k.
"""

from __future__ import annotations

from collections import Counter

import numpy as np


def _pairwise_sq(X: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - X[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _neighbor_order(X: np.ndarray) -> np.ndarray:
    """Per point, all other points sorted by distance (ties by index)."""
    d = _pairwise_sq(X)
    np.fill_diagonal(d, np.inf)
    return np.argsort(d, axis=1, kind="stable")[:, :-1]  # drop the self column


def trustworthiness(high: np.ndarray, low: np.ndarray, k: int) -> float:
    high = np.asarray(high, dtype=np.float64)
    low = np.asarray(low, dtype=np.float64)
    n = high.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n={n}")
    order_high = _neighbor_order(high)
    order_low = _neighbor_order(low)
    # rank of j among i's original-space neighbors (1-based, self excluded)
    rank = np.zeros((n, n), dtype=np.int64)
    rows = np.arange(n)[:, None]
    rank[rows, order_high] = np.arange(1, n)[None, :]
    penalty = 0
    for i in range(n):
        high_set = set(order_high[i, :k].tolist())
        for j in order_low[i, :k].tolist():
            if j not in high_set:
                penalty += rank[i, j] - k
    return 1.0 - (2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0))) * penalty


def knn_family_purity(coords: np.ndarray, families: list[str], k: int) -> float:
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n={n}")
    order = _neighbor_order(coords)
    sizes = Counter(families)
    scores = []
    for i in range(n):
        achievable = min(k, sizes[families[i]] - 1)
        if achievable == 0:
            continue  # singleton family: no same-family neighbor is possible
        same = sum(1 for j in order[i, :k].tolist() if families[j] == families[i])
        scores.append(same / achievable)
    return float(np.mean(scores)) if scores else 1.0
