import numpy as np
import pytest

from hcl.metrics import ari
from hcl.vbgmm import (
    VbgmmPrior,
    _ascend,
    _initial_resp,
    e_step,
    effective_components,
    elbo,
    fit,
    hard_assign,
    m_step,
)


def three_blobs(n_per=100, seed=0, spread=10.0):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [spread, 0.0], [0.0, spread]])
    z = np.concatenate([rng.normal(size=(n_per, 2)) + c for c in centers])
    return z, np.repeat(np.arange(3), n_per)


class TestPrior:
    def test_from_data(self):
        z = np.random.default_rng(0).normal(size=(50, 3))
        prior = VbgmmPrior.from_data(z)
        np.testing.assert_allclose(prior.m0, z.mean(axis=0))
        assert prior.nu0 == 3

    @pytest.mark.parametrize(
        "kwargs",
        [dict(alpha0=0.0), dict(beta0=-1.0), dict(nu0=1.0), dict(W0=np.array([[1.0, 2.0], [0.0, 1.0]]))],
    )
    def test_validation(self, kwargs):
        base = dict(alpha0=1.0, m0=np.zeros(2), beta0=1.0, nu0=2.0, W0=np.eye(2))
        base.update(kwargs)
        with pytest.raises((ValueError, np.linalg.LinAlgError)):
            VbgmmPrior(**base)

    def test_not_positive_definite(self):
        with pytest.raises(np.linalg.LinAlgError):
            VbgmmPrior(1.0, np.zeros(2), 1.0, 2.0, -np.eye(2))


class TestCoordinateAscent:
    def test_elbo_nondecreasing_50_datasets(self):
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(50):
            d = int(rng.integers(1, 5))
            k = int(rng.integers(1, 4))
            centers = rng.normal(scale=4, size=(k, d))
            z = np.concatenate([rng.normal(size=(int(rng.integers(10, 60)), d)) + c for c in centers])
            prior = VbgmmPrior.from_data(z)
            post = _ascend(z, _initial_resp(z, 5, rng), prior, tol=1e-10, max_iter=300)
            worst = min(worst, float(np.min(np.diff(post.elbo_trace))))
        assert worst >= -1e-8

    def test_responsibilities_normalized(self):
        z, _ = three_blobs(seed=2)
        post = fit(z, seed=0)
        resp = e_step(z, post)
        assert np.max(np.abs(resp.sum(axis=1) - 1)) < 1e-9
        assert np.all(resp >= 0)

    def test_responsibilities_normalized_far_points(self):
        z, _ = three_blobs(seed=3)
        post = fit(z, seed=0)
        far = np.array([[1e4, -1e4], [-1e3, 5e3]])
        resp = e_step(far, post)
        assert np.all(np.isfinite(resp)) and np.max(np.abs(resp.sum(axis=1) - 1)) < 1e-9

    def test_elbo_matches_trace(self):
        z, _ = three_blobs(seed=4)
        prior = VbgmmPrior.from_data(z)
        post = fit(z, prior, seed=0, delete_moves=False)
        assert post.elbo_trace[-1] == pytest.approx(elbo(z, post.resp, post, prior), rel=1e-12)

    def test_m_step_counts(self):
        z, labels = three_blobs(seed=5)
        resp = np.eye(3)[labels]
        post = m_step(z, resp, VbgmmPrior.from_data(z, alpha0=0.5))
        np.testing.assert_allclose(post.alpha, 100.5)
        np.testing.assert_allclose(post.nu, 2 + 100)


class TestFit:
    def test_three_separated_gaussians(self):
        scores = []
        for seed in range(10):
            z, labels = three_blobs(seed=seed)
            post = fit(z, seed=seed)
            scores.append(ari(hard_assign(post.resp), labels))
            assert len(effective_components(post)) == 3
        assert min(scores) >= 0.95

    def test_single_gaussian_collapses(self):
        z = np.random.default_rng(6).normal(size=(300, 2))
        post = fit(z, seed=0)
        assert len(effective_components(post)) == 1

    def test_deterministic(self):
        z, _ = three_blobs(seed=7)
        a, b = fit(z, seed=11), fit(z, seed=11)
        np.testing.assert_array_equal(a.resp, b.resp)

    def test_more_components_than_points(self):
        z = np.array([[0.0], [1.0], [10.0]])
        post = fit(z, max_components=10, seed=0)
        assert post.n_components == 3

    def test_rejects_zero_components(self):
        with pytest.raises(ValueError):
            fit(np.zeros((5, 1)), max_components=0)

    def test_degenerate_data_finite(self):
        z = np.ones((20, 2))
        post = fit(z, seed=0)
        assert np.all(np.isfinite(post.resp))

    def test_to_dict(self):
        z, _ = three_blobs(seed=8)
        d = fit(z, seed=0).to_dict()
        assert sum(d["weights"]) == pytest.approx(1.0)
        assert set(d) >= {"weights", "means", "elbo_trace", "converged"}

    def test_hard_assign_tie_lowest(self):
        assert hard_assign(np.array([[0.5, 0.5]]))[0] == 0
