"""Neighborhood graph construction: exact kNN, bandwidth calibration, fuzzy union.

Everything here is brute force and deterministic; the target scale is tens to
a few thousand points.  Ties in neighbor distance are broken by point index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError

SIGMA_LO = 1e-12
SIGMA_HI = 1e12
SUM_TOLERANCE = 1e-6
MAX_BISECT_ITERATIONS = 64


@dataclass(frozen=True)
class KnnGraph:
    """Exact k nearest neighbors per point, self excluded, distances ascending."""

    k: int
    neighbors: np.ndarray  # (n, k) int64
    distances: np.ndarray  # (n, k) float64

    def __post_init__(self):
        if self.neighbors.shape != self.distances.shape:
            raise ValidationError("neighbor and distance arrays must share shape")
        n = self.neighbors.shape[0]
        if np.any(self.neighbors == np.arange(n)[:, None]):
            raise ValidationError("a point lists itself as a neighbor")
        if not np.all(np.isfinite(self.distances)):
            raise ValidationError("non-finite neighbor distance")
        if np.any(np.diff(self.distances, axis=1) < 0):
            raise ValidationError("neighbor distances must be ascending")

    @property
    def n_points(self) -> int:
        return self.neighbors.shape[0]


@dataclass(frozen=True)
class FuzzyGraph:
    """Symmetrized membership graph: per-point rho/sigma and undirected edges.

    Edges hold each undirected pair once as parallel arrays (i < j), sorted by
    (i, j); weights lie in (0, 1].
    """

    rho: np.ndarray
    sigma: np.ndarray
    degenerate: np.ndarray
    edge_i: np.ndarray
    edge_j: np.ndarray
    edge_w: np.ndarray

    def __post_init__(self):
        if np.any(self.sigma <= 0):
            raise ValidationError("every sigma must be positive")
        if np.any(self.rho < 0):
            raise ValidationError("every rho must be nonnegative")
        if np.any((self.edge_w <= 0) | (self.edge_w > 1)):
            raise ValidationError("edge weights must lie in (0, 1]")
        if np.any(self.edge_i >= self.edge_j):
            raise ValidationError("edges must be stored once with i < j")

    @property
    def n_points(self) -> int:
        return self.rho.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edge_w.shape[0]


def build_knn(matrix: np.ndarray, k: int) -> KnnGraph:
    """Exact Euclidean kNN by brute force over all pairs.

    Distances are computed from explicit differences (not the expanded dot
    product) so they are exact and nonnegative; chunked over rows to bound
    memory.
    """
    X = np.ascontiguousarray(matrix, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k < n:
        raise ValidationError(f"k must satisfy 1 <= k < n={n}, got {k}")
    neighbors = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k), dtype=np.float64)
    chunk = max(1, int(2**24 // max(1, n * X.shape[1])))
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        diff = X[start:stop, None, :] - X[None, :, :]
        d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        for row, i in enumerate(range(start, stop)):
            d[row, i] = np.inf  # exclude self by index, not by distance
            order = np.argsort(d[row], kind="stable")[:k]
            neighbors[i] = order
            distances[i] = d[row, order]
    return KnnGraph(k=k, neighbors=neighbors, distances=distances)


def _membership_sum(distances: np.ndarray, rho: float, sigma: float) -> float:
    return float(np.exp(-np.maximum(0.0, distances - rho) / sigma).sum())


def solve_sigma(distances: np.ndarray, rho: float, target: float) -> float:
    """Bisect for the sigma whose membership sum hits the target.

    The sum is monotone nondecreasing in sigma, so 64 bisection steps pin the
    crossing to ~5e-8 absolute.  When the target is unattainable (already
    matched or exceeded as sigma -> 0, e.g. ties at rho), bisection collapses
    to the bracket minimum, which is the correct limiting behavior.
    """
    lo, hi = SIGMA_LO, SIGMA_HI
    mid = 0.5 * (lo + hi)
    for _ in range(MAX_BISECT_ITERATIONS):
        mid = 0.5 * (lo + hi)
        total = _membership_sum(distances, rho, mid)
        # >= so float-saturated sums (a plateau at exactly the target) drive
        # sigma to the plateau's lower edge, and to the bracket floor when the
        # target is unattainable for every positive sigma
        if total >= target:
            hi = mid
        else:
            lo = mid
    return mid


def smooth_knn(
    knn: KnnGraph, target: float | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Calibrate per-point (rho, sigma) so membership sums hit log2(k).

    rho is the nearest-neighbor distance.  Points whose neighbor distances all
    equal rho admit no calibration; they are flagged degenerate and assigned
    the mean sigma of the non-degenerate points (1.0 if none exist).

    Returns (rho, sigma, degenerate_flags).
    """
    if target is None:
        target = float(np.log2(knn.k))
    n = knn.n_points
    rho = knn.distances[:, 0].copy()
    sigma = np.empty(n, dtype=np.float64)
    degenerate = np.zeros(n, dtype=bool)
    for i in range(n):
        d = knn.distances[i]
        if np.all(d <= rho[i]):
            degenerate[i] = True
            continue
        sigma[i] = solve_sigma(d, rho[i], target)
    if np.any(degenerate):
        regular = sigma[~degenerate]
        fill = float(regular.mean()) if regular.size else 1.0
        sigma[degenerate] = fill
    return rho, sigma, degenerate


def directed_memberships(
    knn: KnnGraph, rho: np.ndarray, sigma: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-direction membership weights exp(-max(0, d - rho_i) / sigma_i)."""
    n, k = knn.neighbors.shape
    heads = np.repeat(np.arange(n, dtype=np.int64), k)
    tails = knn.neighbors.reshape(-1)
    weights = np.exp(
        -np.maximum(0.0, knn.distances - rho[:, None]) / sigma[:, None]
    ).reshape(-1)
    return heads, tails, weights


def fuzzy_union(
    n: int,
    heads: np.ndarray,
    tails: np.ndarray,
    weights: np.ndarray,
    rho: np.ndarray | None = None,
    sigma: np.ndarray | None = None,
    degenerate: np.ndarray | None = None,
) -> FuzzyGraph:
    """Symmetrize directed memberships with the probabilistic t-conorm.

    w = w_ij + w_ji - w_ij * w_ji, each undirected edge kept once (i < j),
    zero-weight edges dropped.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if np.any((weights < 0) | (weights > 1)):
        raise ValidationError("directed membership weights must lie in [0, 1]")
    directed: dict[tuple[int, int], float] = {}
    for h, t, w in zip(heads.tolist(), tails.tolist(), weights.tolist()):
        if h == t:
            raise ValidationError("self-membership is not allowed")
        directed[(h, t)] = w
    merged: dict[tuple[int, int], float] = {}
    for (h, t), w in directed.items():
        key = (h, t) if h < t else (t, h)
        if key in merged:
            continue
        back = directed.get((t, h), 0.0)
        merged[key] = w + back - w * back
    pairs = sorted(key for key, w in merged.items() if w > 0.0)
    edge_i = np.asarray([p[0] for p in pairs], dtype=np.int64)
    edge_j = np.asarray([p[1] for p in pairs], dtype=np.int64)
    edge_w = np.asarray([merged[p] for p in pairs], dtype=np.float64)
    if rho is None:
        rho = np.zeros(n, dtype=np.float64)
    if sigma is None:
        sigma = np.ones(n, dtype=np.float64)
    if degenerate is None:
        degenerate = np.zeros(n, dtype=bool)
    return FuzzyGraph(
        rho=rho, sigma=sigma, degenerate=degenerate,
        edge_i=edge_i, edge_j=edge_j, edge_w=edge_w,
    )
