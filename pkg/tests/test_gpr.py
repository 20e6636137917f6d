import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hrp import gpr
from hrp.gpr import ConditioningError, KernelParams, NoiseParam


def _dense_oracle(H, y, Hs, tau, eta, sn):
    """Explicit inverse, no factorization reuse."""
    def k(A, B):
        d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
        return tau ** 2 * np.exp(-d2 / (2 * eta ** 2))
    M = k(H, H) + sn ** 2 * np.eye(len(y))
    Minv = np.linalg.inv(M)
    Ks = k(H, Hs)
    mean = Ks.T @ Minv @ y
    var = tau ** 2 - np.einsum("ij,ik,kj->j", Ks, Minv, Ks)
    return mean, var, M


def _instance(seed, n=None, m=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(1, 51))
    m = m or int(rng.integers(1, 9))
    H = rng.normal(size=(n, m))
    y = rng.normal(size=n) * 3
    tau, eta, sn = rng.uniform(0.5, 2), rng.uniform(0.2, 2), rng.uniform(0.05, 0.5)
    return rng, H, y, tau, eta, sn


class TestKernel:
    def test_same_point(self):
        assert gpr.se_kernel([1.0, 2.0], [1.0, 2.0], KernelParams(1.7, 0.3)) == pytest.approx(1.7 ** 2)

    def test_value(self):
        assert gpr.se_kernel([0.0, 0.0], [1.0, 1.0], KernelParams(1, 1)) == pytest.approx(0.367879, abs=1e-6)

    def test_monotone_decay(self):
        k = KernelParams(1.0, 0.5)
        vals = [gpr.se_kernel([0.0], [d], k) for d in (0.0, 0.5, 1.0, 3.0, 30.0)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-300 or vals[-1] == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            gpr.se_kernel([0.0], [0.0, 1.0], KernelParams(1, 1))

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            KernelParams(0.0, 1.0)
        with pytest.raises(ValueError):
            NoiseParam(-0.1)

    def test_matrix_symmetric_and_matches_scalar(self):
        rng = np.random.default_rng(0)
        H = rng.normal(size=(15, 4))
        kp = KernelParams(1.3, 0.8)
        K = gpr.kernel_matrix(H, H, kp)
        assert np.array_equal(K, K.T)
        assert K[2, 7] == pytest.approx(gpr.se_kernel(H[2], H[7], kp), rel=1e-14)


class TestFit:
    def test_single_point(self):
        g = gpr.fit_gp([[0.3, 0.1]], [4.0], KernelParams(1, 1), NoiseParam(0.0), jitter=0.0)
        np.testing.assert_array_equal(g.chol, [[1.0]])
        np.testing.assert_array_equal(g.alpha_vec, [4.0])

    def test_duplicate_needs_jitter(self):
        from scipy.linalg import LinAlgError, cholesky
        H = np.array([[1.0], [1.0]])
        with pytest.raises(LinAlgError):
            cholesky(gpr.kernel_matrix(H, H, KernelParams(1, 1)), lower=True)
        g = gpr.fit_gp(H, [1.0, 1.0], KernelParams(1, 1), NoiseParam(0.0), jitter=0.0)
        assert 0 < g.jitter <= 1e-6

    def test_conditioning_error_reports_jitter(self, monkeypatch):
        from scipy.linalg import LinAlgError

        def fail(*a, **k):
            raise LinAlgError("forced")
        monkeypatch.setattr(gpr, "cholesky", fail)
        with pytest.raises(ConditioningError) as err:
            gpr.fit_gp([[0.0]], [1.0], KernelParams(2.0, 1.0), NoiseParam(0.0))
        assert err.value.jitter == pytest.approx(1e-4 * 4.0)

    def test_reconstruction(self):
        _, H, y, tau, eta, sn = _instance(1, n=30, m=4)
        g = gpr.fit_gp(H, y, KernelParams(tau, eta), NoiseParam(sn))
        _, _, M = _dense_oracle(H, y, H[:1], tau, eta, sn)
        M = M + g.jitter * np.eye(30)
        np.testing.assert_allclose(g.chol @ g.chol.T, M, rtol=1e-10, atol=1e-10 * np.abs(M).max())

    def test_bad_input(self):
        with pytest.raises(ValueError):
            gpr.fit_gp(np.zeros((0, 2)), [], KernelParams(1, 1), NoiseParam(0.1))
        with pytest.raises(ValueError):
            gpr.fit_gp([[np.nan]], [1.0], KernelParams(1, 1), NoiseParam(0.1))


class TestPosterior:
    def test_interpolates_single_point(self):
        g = gpr.fit_gp([[0.5]], [3.0], KernelParams(1, 1), NoiseParam(0.0), jitter=0.0)
        p = gpr.posterior(g, [0.5])
        assert p.mean == pytest.approx(3.0) and p.variance == 0.0

    def test_unit_noise(self):
        g = gpr.fit_gp([[0.0]], [6.0], KernelParams(1, 1), NoiseParam(1.0), jitter=0.0)
        p = gpr.posterior(g, [0.0])
        assert p.mean == pytest.approx(3.0) and p.variance == pytest.approx(0.5)

    def test_far_reverts_to_prior(self):
        g = gpr.fit_gp([[0.0], [1.0]], [5.0, 7.0], KernelParams(2.0, 0.5), NoiseParam(0.1))
        p = gpr.posterior(g, [1e3])
        assert abs(p.mean) < 1e-12 and p.variance == pytest.approx(4.0)

    def test_two_point_hand_solve(self):
        # K = [[1, k], [k, 1]] with k = exp(-1/2); noise 0
        k = math.exp(-0.5)
        y1, y2 = 2.0, -1.0
        g = gpr.fit_gp([[0.0], [1.0]], [y1, y2], KernelParams(1, 1), NoiseParam(0.0), jitter=0.0)
        # query at x=0.5: k* = exp(-1/8) for both points
        ks = math.exp(-0.125)
        expected = ks * (y1 + y2) / (1 + k)
        assert gpr.predict_point(g, [0.5]) == pytest.approx(expected, rel=1e-12)

    def test_point_equals_mean(self):
        rng, H, y, tau, eta, sn = _instance(2, n=40, m=3)
        g = gpr.fit_gp(H, y, KernelParams(tau, eta), NoiseParam(sn))
        Q = rng.normal(size=(100, 3))
        mean, _ = gpr.posterior_batch(g, Q)
        np.testing.assert_allclose(gpr.predict_point_batch(g, Q), mean, rtol=1e-12, atol=1e-12)
        assert gpr.predict_point(g, Q[0]) == gpr.posterior(g, Q[0]).mean

    @pytest.mark.parametrize("seed", range(10))
    def test_dense_oracle(self, seed):
        rng, H, y, tau, eta, sn = _instance(seed + 10)
        Q = rng.normal(size=(20, H.shape[1]))
        g = gpr.fit_gp(H, y, KernelParams(tau, eta), NoiseParam(sn))
        mean, var = gpr.posterior_batch(g, Q)
        om, ov, _ = _dense_oracle(H, y, Q, tau, eta, sn)
        np.testing.assert_allclose(mean, om, rtol=1e-8, atol=1e-8 * np.abs(om).max())
        np.testing.assert_allclose(var, ov, rtol=1e-8, atol=1e-8 * tau ** 2)

    def test_variance_below_prior(self):
        rng, H, y, tau, eta, sn = _instance(3, n=25, m=2)
        g = gpr.fit_gp(H, y, KernelParams(tau, eta), NoiseParam(sn))
        _, var = gpr.posterior_batch(g, rng.normal(size=(200, 2)) * 3)
        assert np.all(var >= 0) and np.all(var <= tau ** 2 + 1e-10)

    def test_noiseless_interpolation(self):
        rng = np.random.default_rng(4)
        H = rng.normal(size=(12, 2)) * 2
        y = rng.normal(size=12) * 10
        g = gpr.fit_gp(H, y, KernelParams(1.0, 0.7), NoiseParam(0.0))
        np.testing.assert_allclose(gpr.predict_point_batch(g, H), y, rtol=1e-6)

    def test_query_shape(self):
        g = gpr.fit_gp([[0.0, 1.0]], [1.0], KernelParams(1, 1), NoiseParam(0.1))
        with pytest.raises(ValueError):
            gpr.posterior(g, [0.0])

    def test_negative_variance_raises(self):
        g = gpr.fit_gp([[0.0]], [1.0], KernelParams(1, 1), NoiseParam(0.0), jitter=0.0)
        broken = gpr.GPModel(g.H, g.y, g.kernel, g.noise, g.jitter, g.chol * 0.5, g.alpha_vec)
        with pytest.raises(ConditioningError):
            gpr.posterior(broken, [0.0])


class TestInterval:
    def test_z(self):
        assert round(gpr.z_value(0.05), 2) == 1.96
        assert gpr.z_value(0.32) == pytest.approx(0.9945, abs=1e-4)

    def test_fixture(self):
        lo, hi = gpr.interval_from(100.0, 25.0, 0.32)
        assert lo == pytest.approx(95.03, abs=0.01) and hi == pytest.approx(104.97, abs=0.01)

    def test_zero_variance(self):
        lo, hi = gpr.interval_from(7.0, 0.0, 0.05)
        assert lo == hi == 7.0

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5])
    def test_bad_alpha(self, alpha):
        with pytest.raises(ValueError):
            gpr.z_value(alpha)

    def test_interval_object(self):
        g = gpr.fit_gp([[0.0], [2.0]], [1.0, 3.0], KernelParams(1, 1), NoiseParam(0.2))
        iv = gpr.predict_interval(g, [1.0], 0.05)
        post = gpr.posterior(g, [1.0])
        assert iv.lower <= iv.point <= iv.upper
        assert iv.width == pytest.approx(2 * gpr.z_value(0.05) * math.sqrt(post.variance))
        wide = gpr.predict_interval(g, [1.0], 0.05, include_noise=True)
        assert wide.width == pytest.approx(2 * gpr.z_value(0.05) * math.sqrt(post.variance + 0.04))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-4, 0.99), st.floats(1e-4, 0.99), st.floats(-5, 5))
    def test_nesting(self, a1, a2, x):
        a1, a2 = sorted((a1, a2))
        g = gpr.fit_gp([[0.0], [1.0]], [1.0, -1.0], KernelParams(1, 1), NoiseParam(0.1))
        i1, i2 = gpr.predict_interval(g, [x], a1), gpr.predict_interval(g, [x], a2)
        assert i1.lower <= i2.lower + 1e-12 and i1.upper >= i2.upper - 1e-12

    def test_calibration(self):
        rng = np.random.default_rng(0)
        kp, noise = KernelParams(1.0, 0.7), NoiseParam(0.1)
        n_train, n_test = 150, 500
        X = rng.uniform(-3, 3, size=(n_train + n_test, 1))
        K = gpr.kernel_matrix(X, X, kp) + 1e-10 * np.eye(len(X))
        f = np.linalg.cholesky(K) @ rng.normal(size=len(X))
        y = f + noise.noise_std * rng.normal(size=len(X))
        g = gpr.fit_gp(X[:n_train], y[:n_train], kp, noise)
        _, lo, hi, _ = gpr.predict_interval_batch(g, X[n_train:], 0.05)
        cov = np.mean((f[n_train:] >= lo) & (f[n_train:] <= hi))
        assert 0.90 <= cov <= 0.99


class TestLikelihood:
    def test_scalar(self):
        g = gpr.fit_gp([[0.0]], [0.0], KernelParams(1, 1), NoiseParam(0.0), jitter=0.0)
        assert gpr.log_marginal_likelihood(g) == pytest.approx(-0.9189, abs=1e-4)

    def test_dense_and_permutation(self):
        rng, H, y, tau, eta, sn = _instance(5, n=20, m=3)
        g = gpr.fit_gp(H, y, KernelParams(tau, eta), NoiseParam(sn))
        _, _, M = _dense_oracle(H, y, H[:1], tau, eta, sn)
        M = M + g.jitter * np.eye(20)
        _, logdet = np.linalg.slogdet(M)
        dense = -0.5 * logdet - 0.5 * y @ np.linalg.solve(M, y) - 10 * math.log(2 * math.pi)
        assert gpr.log_marginal_likelihood(g) == pytest.approx(dense, rel=1e-8)
        perm = rng.permutation(20)
        g2 = gpr.fit_gp(H[perm], y[perm], KernelParams(tau, eta), NoiseParam(sn))
        assert gpr.log_marginal_likelihood(g2) == pytest.approx(gpr.log_marginal_likelihood(g), rel=1e-10)

    def test_analytic_gradient(self):
        _, H, y, *_ = _instance(6, n=15, m=2)
        sq = ((H[:, None] - H[None]) ** 2).sum(-1)
        x = np.log([1.3, 0.6, 0.2])
        _, g = gpr._lml_and_grad(x, H, y, sq)
        eps = 1e-6
        for k in range(3):
            e = np.zeros(3)
            e[k] = eps
            num = (gpr._lml_and_grad(x + e, H, y, sq)[0] - gpr._lml_and_grad(x - e, H, y, sq)[0]) / (2 * eps)
            assert g[k] == pytest.approx(num, rel=1e-5)


class TestOptimize:
    def test_budget_one_returns_init(self):
        _, H, y, *_ = _instance(7, n=30, m=2)
        kp, npar, _ = gpr.optimize_hyperparams(H, y, init=(1.2, 0.9, 0.3), budget=1)
        assert (kp.amplitude, kp.length_scale, npar.noise_std) == (1.2, 0.9, 0.3)

    def test_never_worse(self):
        _, H, y, *_ = _instance(8, n=40, m=3)
        init = (0.7, 2.0, 0.4)
        kp, npar, _ = gpr.optimize_hyperparams(H, y, init=init, budget=60, restarts=3)
        lml = lambda a, b, c: gpr.log_marginal_likelihood(gpr.fit_gp(H, y, KernelParams(a, b), NoiseParam(c)))
        assert lml(kp.amplitude, kp.length_scale, npar.noise_std) >= lml(*init) - 1e-9

    def test_recovers_length_scale(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-2, 2, size=(200, 1))
        K = gpr.kernel_matrix(X, X, KernelParams(1.0, 0.5)) + 1e-10 * np.eye(200)
        y = np.linalg.cholesky(K) @ rng.normal(size=200) + 0.1 * rng.normal(size=200)
        kp, npar, _ = gpr.optimize_hyperparams(X, y, init=(1.0, 1.0, 0.3), budget=400, restarts=4)
        assert 0.25 <= kp.length_scale <= 1.0

    def test_deterministic(self):
        _, H, y, *_ = _instance(9, n=30, m=2)
        a = gpr.optimize_hyperparams(H, y, budget=100, restarts=3, seed=4)
        b = gpr.optimize_hyperparams(H, y, budget=100, restarts=3, seed=4)
        assert a == b


class TestSubsample:
    def test_identity(self):
        H, y = np.arange(200.0).reshape(100, 2), np.arange(100.0)
        Hs, ys, idx = gpr.subsample_training(H, y, 200, 0)
        assert Hs is H and ys is y and len(idx) == 100

    def test_cap(self):
        H, y = np.arange(10000.0).reshape(5000, 2), np.arange(5000.0)
        Hs, ys, idx = gpr.subsample_training(H, y, 2000, 3)
        assert Hs.shape == (2000, 2) and len(np.unique(idx)) == 2000
        np.testing.assert_array_equal(ys, y[idx])
        _, _, again = gpr.subsample_training(H, y, 2000, 3)
        np.testing.assert_array_equal(idx, again)
        _, _, other = gpr.subsample_training(H, y, 2000, 4)
        assert not np.array_equal(idx, other)


def test_persistence_round_trip(tmp_path):
    rng, H, y, tau, eta, sn = _instance(11, n=20, m=3)
    g = gpr.fit_gp(H, y, KernelParams(tau, eta), NoiseParam(sn))
    gpr.save_gp(tmp_path / "gp.json", g, extra={"tag": 1})
    back, meta = gpr.load_gp(tmp_path / "gp.json")
    assert back.jitter == g.jitter and meta["tag"] == 1
    Q = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(gpr.posterior_batch(back, Q)[0], gpr.posterior_batch(g, Q)[0])
