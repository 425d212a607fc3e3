import numpy as np
import pytest

from latent_atlas.errors import ValidationError
from latent_atlas.projection import fit_curve, knn_family_purity, layout, pca_init
from latent_atlas.projection.graph import FuzzyGraph
from latent_atlas.projection.layout import (
    REPULSION_EPS,
    attractive_coeff,
    attractive_loss,
    curve,
    repulsive_coeff,
    repulsive_loss,
)

from oracles import central_difference_gradient

# frozen output of the independent grid-search oracle over a in [0.1, 10],
# b in [0.1, 2] at 1e-3 resolution (see tests/test_acceptance.py for the
# budgeted re-derivation); the full-resolution scan gives:
GRID_ORACLE_A = 1.577
GRID_ORACLE_B = 0.895


def single_edge_graph(w=1.0):
    return FuzzyGraph(
        rho=np.zeros(2),
        sigma=np.ones(2),
        degenerate=np.zeros(2, dtype=bool),
        edge_i=np.array([0]),
        edge_j=np.array([1]),
        edge_w=np.array([w]),
    )


class TestFitCurve:
    def test_min_dist_01_matches_grid_oracle(self):
        a, b = fit_curve(0.1)
        assert abs(a - GRID_ORACLE_A) <= 0.05
        assert abs(b - GRID_ORACLE_B) <= 0.05

    def test_phi_at_zero_is_one(self):
        for min_dist in (0.05, 0.1, 0.5, 1.0):
            a, b = fit_curve(min_dist)
            assert curve(0.0, a, b) == 1.0

    def test_fitted_beats_unit_parameters(self):
        a, b = fit_curve(0.1)
        x = np.linspace(0.0, 3.0, 300)
        target = np.where(x <= 0.1, 1.0, np.exp(-(x - 0.1)))
        fitted = ((curve(x, a, b) - target) ** 2).sum()
        unit = ((curve(x, 1.0, 1.0) - target) ** 2).sum()
        assert fitted <= unit

    def test_deterministic(self):
        assert fit_curve(0.25) == fit_curve(0.25)

    def test_rejects_nonpositive_min_dist(self):
        with pytest.raises(ValidationError):
            fit_curve(0.0)


class TestGradients:
    def test_attractive_matches_finite_differences(self):
        a, b = fit_curve(0.1)
        rng = np.random.default_rng(1)
        for _ in range(20):
            yj = rng.uniform(-2, 2, size=2)
            direction = rng.normal(size=2)
            direction /= np.linalg.norm(direction)
            yi = yj + direction * rng.uniform(0.7, 3.0)  # away from clipping

            def loss(y):
                return attractive_loss(((y - yj) ** 2).sum(), a, b)

            d2 = float(((yi - yj) ** 2).sum())
            update = attractive_coeff(d2, a, b) * (yi - yj)  # negative gradient
            fd = central_difference_gradient(loss, yi, h=1e-6)
            assert np.all(np.abs(update + fd) <= 1e-4 * np.abs(fd))

    def test_repulsive_matches_finite_differences(self):
        a, b = fit_curve(0.1)
        rng = np.random.default_rng(2)
        for _ in range(20):
            yt = rng.uniform(-2, 2, size=2)
            direction = rng.normal(size=2)
            direction /= np.linalg.norm(direction)
            yi = yt + direction * rng.uniform(0.8, 3.0)

            def loss(y):
                return repulsive_loss(((y - yt) ** 2).sum(), a, b)

            d2 = float(((yi - yt) ** 2).sum())
            update = repulsive_coeff(d2, a, b, eps=0.0) * (yi - yt)
            fd = central_difference_gradient(loss, yi, h=1e-6)
            assert np.all(np.abs(update + fd) <= 1e-4 * np.abs(fd))

    def test_eps_form_is_scaled_eps_free_form(self):
        a, b = fit_curve(0.1)
        for d2 in (0.25, 1.0, 4.0):
            scaled = repulsive_coeff(d2, a, b) * (REPULSION_EPS + d2) / d2
            assert np.isclose(scaled, repulsive_coeff(d2, a, b, eps=0.0), rtol=1e-12)

    def test_attraction_points_inward_repulsion_outward(self):
        a, b = fit_curve(0.1)
        yi, yj = np.array([1.0, 0.0]), np.array([0.0, 0.0])
        att = attractive_coeff(1.0, a, b) * (yi - yj)
        rep = repulsive_coeff(1.0, a, b) * (yi - yj)
        assert att[0] < 0 < rep[0]


class TestPcaInit:
    def test_deterministic_and_bounded(self, fixture60):
        a = pca_init(fixture60.matrix, seed=42)
        b = pca_init(fixture60.matrix, seed=42)
        assert np.array_equal(a, b)
        assert np.abs(a).max() == pytest.approx(10.0)

    def test_degenerate_falls_back_to_noise(self):
        X = np.tile(np.array([1.0, 2.0, 3.0]), (5, 1))  # zero variance
        init = pca_init(X, seed=0)
        assert init.shape == (5, 2)
        assert np.all(np.abs(init) <= 10.0)
        assert np.array_equal(init, pca_init(X, seed=0))

    def test_rank_one_falls_back(self):
        X = np.outer(np.arange(6, dtype=float), np.ones(4))
        init = pca_init(X, seed=3)
        assert np.array_equal(init, pca_init(X, seed=3))


class TestLayout:
    def test_two_point_attraction_vs_closed_form(self):
        # One weight-1 edge, points 10 apart: negatives always hit an endpoint
        # (n=2) and are skipped, so the dynamics are exactly deterministic
        # attraction.  Replay them in closed form along the connecting axis.
        a, b = fit_curve(0.1)
        fuzzy = single_edge_graph(1.0)
        init = np.array([[0.0, 0.0], [10.0, 0.0]])
        n_epochs = 500
        coords = layout(fuzzy, a, b, init, n_epochs=n_epochs, learning_rate=1.0,
                        negative_sample_rate=5, seed=9)

        d = 10.0  # signed separation along the connecting axis
        trace = [d]
        next_sample = 1.0
        for epoch in range(n_epochs):
            alpha = 1.0 * (1.0 - epoch / n_epochs)
            fired = 0
            while next_sample <= epoch:
                fired += 1
                next_sample += 1.0
            # two directed copies of the edge fire together in schedule order
            for _ in range(2 * fired):
                g = max(-4.0, min(4.0, attractive_coeff(d * d, a, b) * d))
                d = d + 2.0 * alpha * g
            trace.append(d)

        final = float(np.linalg.norm(coords[0] - coords[1]))
        assert final < 2.0
        assert abs(final - abs(d)) < 1e-9  # layout agrees with the replay
        # |separation| trends monotonically down until attraction first
        # overshoots zero, and stays small afterwards
        overshoot = next((i for i, t in enumerate(trace) if t < 0), len(trace))
        assert overshoot > 3
        pre = trace[:overshoot]
        assert all(t1 <= t0 + 1e-12 for t0, t1 in zip(pre, pre[1:]))
        assert max(abs(t) for t in trace[overshoot:]) < 2.0

    def test_single_point_unchanged(self):
        fuzzy = FuzzyGraph(
            rho=np.zeros(1), sigma=np.ones(1), degenerate=np.zeros(1, dtype=bool),
            edge_i=np.array([], dtype=np.int64), edge_j=np.array([], dtype=np.int64),
            edge_w=np.array([]),
        )
        init = np.array([[3.25, -1.5]])
        out = layout(fuzzy, 1.58, 0.9, init, n_epochs=50, seed=1)
        assert np.array_equal(out, init)

    def test_cluster_purity_after_layout(self, fixture_small, model_small):
        purity = knn_family_purity(model_small.coords, fixture_small.families, 10)
        assert purity >= 0.9

    def test_deterministic(self, fixture_small):
        from latent_atlas.projection import Hyper, fit

        m1 = fit(fixture_small, Hyper(k=10, min_dist=0.1, seed=7))
        m2 = fit(fixture_small, Hyper(k=10, min_dist=0.1, seed=7))
        assert np.array_equal(m1.coords, m2.coords)

    def test_rejects_zero_epochs(self):
        fuzzy = single_edge_graph()
        with pytest.raises(ValidationError):
            layout(fuzzy, 1.58, 0.9, np.zeros((2, 2)), n_epochs=0)
