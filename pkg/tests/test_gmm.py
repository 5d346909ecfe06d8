import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.cluster import KMeans

from fedhd import gmm
from fedhd.numeric import spawn_stream


def two_clusters(seed, n=100, d=4, sep=5.0):
    r = np.random.default_rng(seed)
    e0 = np.zeros(d)
    e0[0] = sep
    return np.vstack([e0 + r.standard_normal((n, d)), -e0 + r.standard_normal((n, d))]), e0


class TestFit:
    def test_single_component_closed_form(self, gen):
        x = gen.normal(size=(50, 3))
        model, resp = gmm.fit_gmm(x, 1, rng=spawn_stream(0, 0))
        np.testing.assert_allclose(model.means[0], x.mean(axis=0), atol=1e-12)
        pop = np.cov(x.T, bias=True)
        # eigenvalues are far above the floor, so the floor is inactive ...
        np.testing.assert_allclose(model.covs[0], pop, atol=1e-12)
        # ... and the result agrees with the "+ eps * I" form to within eps
        np.testing.assert_allclose(model.covs[0], pop + 1e-6 * np.eye(3), atol=1.01e-6)
        np.testing.assert_array_equal(resp, 1.0)

    def test_two_clusters_match_kmeans(self):
        x, e0 = two_clusters(0)
        model, _ = gmm.fit_gmm(x, 2, rng=spawn_stream(3, 0))
        km = KMeans(2, n_init=10, random_state=0).fit(x).cluster_centers_
        for center in (e0, -e0):
            nearest = model.means[np.argmin(np.linalg.norm(model.means - center, axis=1))]
            assert np.linalg.norm(nearest - center) < 0.5
            km_nearest = km[np.argmin(np.linalg.norm(km - center, axis=1))]
            assert np.linalg.norm(nearest - km_nearest) < 0.5

    def test_deterministic(self, gen):
        x = gen.normal(size=(80, 5))
        a, _ = gmm.fit_gmm(x, 3, rng=spawn_stream(9, 1))
        b, _ = gmm.fit_gmm(x, 3, rng=spawn_stream(9, 1))
        np.testing.assert_array_equal(a.means, b.means)
        np.testing.assert_array_equal(a.covs, b.covs)

    def test_insufficient_patches(self):
        with pytest.raises(ValueError, match="insufficient patches"):
            gmm.fit_gmm(np.zeros((1, 3)), 2)

    def test_non_finite(self):
        x = np.ones((5, 2))
        x[2, 1] = np.nan
        with pytest.raises(ValueError):
            gmm.fit_gmm(x, 1)

    def test_small_slide_reduces_components(self, gen):
        model, resp = gmm.fit_gmm(gen.normal(size=(7, 2)), 16)
        assert model.n_components == 3
        assert resp.shape == (7, 3)

    def test_constant_data(self):
        v = np.array([1.5, -2.0, 0.25])
        model, _ = gmm.fit_gmm(np.tile(v, (10, 1)), 1)
        (mean, cov), = gmm.component_moments(model)
        np.testing.assert_allclose(mean, v)
        np.testing.assert_allclose(cov, 1e-6 * np.eye(3), atol=1e-18)

    def test_duplicated_points_stay_finite(self, gen):
        x = np.repeat(gen.normal(size=(3, 4)), 10, axis=0)
        model, resp = gmm.fit_gmm(x, 3, rng=spawn_stream(1, 1))
        assert np.isfinite(gmm.log_likelihood(model, x))
        assert np.all(np.isfinite(resp))

    def test_diagonal_mode_default_for_wide_features(self, gen):
        model, _ = gmm.fit_gmm(gen.normal(size=(20, 130)), 2)
        assert model.cov_mode == "diagonal"
        assert model.covs.shape == (2, 130)
        assert np.all(model.covs >= 1e-6)

    def test_weights_fixed_uniform(self, gen):
        model, _ = gmm.fit_gmm(gen.normal(size=(60, 3)), 4)
        np.testing.assert_array_equal(model.weights, np.full(4, 0.25))


class TestDensities:
    def test_standard_normal_at_zero(self):
        model = gmm.GmmModel(np.zeros((1, 1)), np.ones((1, 1, 1)))
        assert gmm.log_likelihood(model, [[0.0]]) == pytest.approx(-0.5 * np.log(2 * np.pi),
                                                                   abs=1e-12)
        assert gmm.log_likelihood(model, [[0.0]]) == pytest.approx(-0.918938, abs=1e-6)

    def test_single_component_responsibilities(self, gen):
        model = gmm.GmmModel(np.zeros((1, 2)), np.eye(2)[None])
        np.testing.assert_array_equal(gmm.responsibilities(model, gen.normal(size=(5, 2))), 1.0)

    def test_separated_components(self):
        means = np.array([[0.0, 0.0], [100.0, 0.0]])
        model = gmm.GmmModel(means, np.repeat(np.eye(2)[None], 2, axis=0))
        r = gmm.responsibilities(model, [[0.0, 0.0]])
        assert r[0, 0] > 1 - 1e-6

    def test_dimension_mismatch(self):
        model = gmm.GmmModel(np.zeros((1, 2)), np.eye(2)[None])
        with pytest.raises(ValueError, match="dimension mismatch"):
            gmm.responsibilities(model, np.zeros((3, 4)))

    def test_diagonal_matches_full(self, gen):
        var = gen.uniform(0.5, 2.0, size=(2, 3))
        means = gen.normal(size=(2, 3))
        x = gen.normal(size=(10, 3))
        diag = gmm.GmmModel(means, var, cov_mode="diagonal")
        full = gmm.GmmModel(means, np.stack([np.diag(v) for v in var]))
        assert gmm.log_likelihood(diag, x) == pytest.approx(gmm.log_likelihood(full, x))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from(["full", "diagonal"]))
def test_em_invariants(seed, mode):
    r = np.random.default_rng(seed)
    K, d, M = int(r.integers(10, 80)), int(r.integers(1, 5)), int(r.integers(1, 5))
    x = r.normal(size=(K, d)) + r.integers(0, 3, size=(K, 1)) * 3.0
    model, resp, trace = gmm.fit_gmm(x, M, cov_mode=mode, rng=spawn_stream(seed, 0),
                                     return_trace=True)
    assert np.all(np.diff(trace) >= -1e-8)
    np.testing.assert_allclose(resp.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(model.weights == 1.0 / model.n_components)
    if mode == "full":
        for cov in model.covs:
            np.testing.assert_allclose(cov, cov.T, atol=1e-12)
            assert np.linalg.eigvalsh(cov).min() >= 1e-6 * (1 - 1e-6)


def test_permutation_invariance():
    x, _ = two_clusters(4)
    perm = np.random.default_rng(0).permutation(len(x))
    a, _ = gmm.fit_gmm(x, 2, rng=spawn_stream(1, 0))
    b, _ = gmm.fit_gmm(x[perm], 2, rng=spawn_stream(2, 0))
    order_a = np.argsort(a.means[:, 0])
    order_b = np.argsort(b.means[:, 0])
    np.testing.assert_allclose(a.means[order_a], b.means[order_b], atol=1e-6)
    np.testing.assert_allclose(a.covs[order_a], b.covs[order_b], atol=1e-6)
