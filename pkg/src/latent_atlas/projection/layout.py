"""Low-dimensional layout: curve fit, SGD with negative sampling, PCA init.

The optimization follows the classic fuzzy-graph embedding recipe: positive
edges are sampled on an epochs-per-sample schedule proportional to weight,
each positive pulls both endpoints together, and uniformly drawn negative
samples push the head away.  Single-threaded and bit-reproducible for a
fixed seed.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import least_squares

from ..errors import CurveFitError, LayoutDivergenceError, ValidationError
from .graph import FuzzyGraph

REPULSION_EPS = 1e-3
GRAD_CLIP = 4.0
CURVE_SAMPLES = 300
CURVE_SPAN = 3.0
INIT_RANGE = 10.0


def fit_curve(min_dist: float, max_nfev: int = 200) -> tuple[float, float]:
    """Least-squares (a, b) so 1/(1 + a x^(2b)) tracks the min_dist falloff.

    The target is 1 for x <= min_dist and exp(-(x - min_dist)) beyond, sampled
    at 300 even points on [0, 3].  Deterministic; raises CurveFitError with
    best-so-far values if the optimizer exhausts its budget.
    """
    if min_dist <= 0:
        raise ValidationError(f"min_dist must be positive, got {min_dist}")
    x = np.linspace(0.0, CURVE_SPAN, CURVE_SAMPLES)
    target = np.where(x <= min_dist, 1.0, np.exp(-(x - min_dist)))

    def residual(params):
        a, b = params
        return 1.0 / (1.0 + a * x ** (2.0 * b)) - target

    result = least_squares(
        residual,
        x0=np.array([1.0, 1.0]),
        bounds=(np.array([1e-3, 1e-3]), np.array([1e3, 1e2])),
        max_nfev=max_nfev,
    )
    a, b = float(result.x[0]), float(result.x[1])
    if not result.success:
        raise CurveFitError(f"curve fit did not converge: {result.message}", best=(a, b))
    return a, b


def curve(x, a: float, b: float):
    """The fitted membership curve 1/(1 + a x^(2b))."""
    return 1.0 / (1.0 + a * np.asarray(x, dtype=np.float64) ** (2.0 * b))


def attractive_coeff(d2: float, a: float, b: float) -> float:
    """Update coefficient pulling an edge's endpoints together.

    Multiplies (y_i - y_j); equals minus the gradient of log(1 + a d^2b).
    Zero at coincident points (the pull has nowhere to go).
    """
    if d2 <= 0.0:
        return 0.0
    return (-2.0 * a * b * d2 ** (b - 1.0)) / (1.0 + a * d2**b)


def repulsive_coeff(d2: float, a: float, b: float, eps: float = REPULSION_EPS) -> float:
    """Update coefficient pushing a head away from a negative sample.

    Multiplies (y_i - y_t); with eps=0 it equals minus the gradient of
    -log(1 - 1/(1 + a d^2b)).  eps guards the pole at d=0.
    """
    return (2.0 * b) / ((eps + d2) * (1.0 + a * d2**b))


def attractive_loss(d2, a: float, b: float):
    """Edge-wise attractive objective; its negative gradient is the update."""
    return np.log1p(a * np.asarray(d2, dtype=np.float64) ** b)


def repulsive_loss(d2, a: float, b: float):
    """Edge-wise repulsive objective (eps-free form) for gradient checks."""
    d2 = np.asarray(d2, dtype=np.float64)
    return np.log1p(a * d2**b) - np.log(a) - b * np.log(d2)


def pca_init(matrix: np.ndarray, seed: int, scale: float = INIT_RANGE) -> np.ndarray:
    """Deterministic 2D PCA of the embeddings scaled into [-scale, scale].

    Falls back to seeded uniform noise when the data has rank < 2.  Column
    signs are fixed so the largest-magnitude score in each is positive.
    """
    X = np.asarray(matrix, dtype=np.float64)
    n = X.shape[0]
    centered = X - X.mean(axis=0)
    fallback = False
    if n < 3:
        fallback = True
    else:
        u, s, _ = np.linalg.svd(centered, full_matrices=False)
        if s.shape[0] < 2 or s[0] <= 0 or s[1] <= 1e-10 * s[0]:
            fallback = True
    if fallback:
        rng = np.random.default_rng(seed)
        return rng.uniform(-scale, scale, size=(n, 2))
    coords = u[:, :2] * s[:2]
    for col in range(2):
        extreme = int(np.argmax(np.abs(coords[:, col])))
        if coords[extreme, col] < 0:
            coords[:, col] = -coords[:, col]
    peak = np.abs(coords).max()
    return coords * (scale / peak)


def _make_schedule(
    fuzzy: FuzzyGraph, n_epochs: int, negative_sample_rate: int
) -> tuple[list[int], list[int], list[list[tuple[int, int]]]]:
    """Expand the fuzzy graph to a directed edge list and precompute, per
    epoch, which directed edges fire and how many negatives each draws.

    The schedule depends only on edge weights, never on coordinates, so it can
    be fixed up front without changing the sampled dynamics.
    """
    heads = np.concatenate([fuzzy.edge_i, fuzzy.edge_j])
    tails = np.concatenate([fuzzy.edge_j, fuzzy.edge_i])
    weights = np.concatenate([fuzzy.edge_w, fuzzy.edge_w])
    order = np.lexsort((tails, heads))
    heads, tails, weights = heads[order], tails[order], weights[order]

    eps_per_sample = weights.max() / weights
    eps_per_negative = eps_per_sample / negative_sample_rate
    next_sample = eps_per_sample.copy()
    next_negative = eps_per_negative.copy()
    per_epoch: list[list[tuple[int, int]]] = []
    for epoch in range(n_epochs):
        fired: list[tuple[int, int]] = []
        for e in range(heads.shape[0]):
            if next_sample[e] <= epoch:
                n_neg = int((epoch - next_negative[e]) / eps_per_negative[e])
                fired.append((e, n_neg))
                next_sample[e] += eps_per_sample[e]
                next_negative[e] += n_neg * eps_per_negative[e]
        per_epoch.append(fired)
    return heads.tolist(), tails.tolist(), per_epoch


def layout(
    fuzzy: FuzzyGraph,
    a: float,
    b: float,
    init: np.ndarray,
    n_epochs: int = 200,
    learning_rate: float = 1.0,
    negative_sample_rate: int = 5,
    seed: int = 42,
) -> np.ndarray:
    """Optimize 2D coordinates against the fuzzy graph.

    init is the starting layout (see pca_init) and is not mutated.  Raises
    LayoutDivergenceError naming the epoch and point if a coordinate goes
    non-finite.
    """
    if n_epochs < 1:
        raise ValidationError(f"n_epochs must be >= 1, got {n_epochs}")
    coords = np.array(init, dtype=np.float64)
    n = coords.shape[0]
    if fuzzy.n_edges == 0:
        return coords
    heads, tails, per_epoch = _make_schedule(fuzzy, n_epochs, negative_sample_rate)

    total_negatives = sum(n_neg for fired in per_epoch for _, n_neg in fired)
    rng = np.random.default_rng(seed)
    negative_pool = rng.integers(0, n, size=total_negatives).tolist()
    pool_pos = 0

    y = coords.tolist()  # plain floats: the loop is scalar-heavy
    clip_hi, clip_lo = GRAD_CLIP, -GRAD_CLIP
    for epoch in range(n_epochs):
        alpha = learning_rate * (1.0 - epoch / n_epochs)
        for e, n_neg in per_epoch[epoch]:
            i, j = heads[e], tails[e]
            yi, yj = y[i], y[j]
            dx, dy = yi[0] - yj[0], yi[1] - yj[1]
            d2 = dx * dx + dy * dy
            if d2 > 0.0:
                coeff = (-2.0 * a * b * d2 ** (b - 1.0)) / (1.0 + a * d2**b)
                gx = min(clip_hi, max(clip_lo, coeff * dx))
                gy = min(clip_hi, max(clip_lo, coeff * dy))
                yi[0] += alpha * gx
                yi[1] += alpha * gy
                yj[0] -= alpha * gx
                yj[1] -= alpha * gy
            for _ in range(n_neg):
                t = negative_pool[pool_pos]
                pool_pos += 1
                if t == i or t == j:
                    continue
                yt = y[t]
                dx, dy = yi[0] - yt[0], yi[1] - yt[1]
                d2 = dx * dx + dy * dy
                coeff = (2.0 * b) / ((REPULSION_EPS + d2) * (1.0 + a * d2**b))
                yi[0] += alpha * min(clip_hi, max(clip_lo, coeff * dx))
                yi[1] += alpha * min(clip_hi, max(clip_lo, coeff * dy))
        for p in range(n):
            if not (np.isfinite(y[p][0]) and np.isfinite(y[p][1])):
                raise LayoutDivergenceError(epoch, p)
    return np.asarray(y, dtype=np.float64)
