import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dopplersync import kernels, rw
from dopplersync.channel import ChannelParams, NodeObservation, PriorSpec, wrap_phase
from dopplersync.graph import uniform_pmfs


def brute_force_posterior(local, kernel):
    """Marginals of p(path) ∝ prod_k local[k, l_k] prod_k kernel[l_{k-1}, l_k] by enumeration."""
    L, nq = local.shape
    post = np.zeros((L, nq))
    for path in itertools.product(range(nq), repeat=L):
        p = np.prod(local[np.arange(L), path])
        for k in range(1, L):
            p *= kernel[path[k - 1], path[k]]
        for k, l in enumerate(path):
            post[k, l] += p
    return post / post.sum(axis=1, keepdims=True)


class TestSigmaW:
    def test_sixth_mode(self):
        prior = PriorSpec(0.01, 1e-5)
        assert rw.max_phase_step(prior, 534) == pytest.approx(0.02065)
        assert rw.sigma_w2_from_priors(prior, 534, "sixth") == pytest.approx(0.02065 / 6)

    def test_uniform_var_mode(self):
        assert rw.sigma_w2_from_priors(PriorSpec(), 534, "uniform_var") == pytest.approx(1.42141e-4, rel=1e-4)

    def test_errors(self):
        with pytest.raises(ValueError):
            rw.sigma_w2_from_priors(PriorSpec(), 534, "other")
        with pytest.raises(ValueError):
            rw.max_phase_step(PriorSpec(), 1)


class TestKernel:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(4, 64), st.floats(1e-6, 50.0))
    def test_stochastic_symmetric_circulant(self, nq, s2):
        K = rw.build_kernel(nq, s2).kernel
        np.testing.assert_allclose(K.sum(1), 1.0, atol=1e-12)
        np.testing.assert_allclose(K, K.T, atol=1e-15)
        for l in range(nq):
            np.testing.assert_array_equal(K[l], np.roll(K[0], l))

    def test_limits(self):
        np.testing.assert_allclose(rw.build_kernel(16, 1e-8).kernel, np.eye(16), atol=1e-12)
        np.testing.assert_allclose(rw.build_kernel(16, (2 * np.pi) ** 2).kernel, 1 / 16, atol=1e-6)

    def test_errors(self):
        with pytest.raises(ValueError):
            rw.build_kernel(16, 0.0)
        with pytest.raises(ValueError):
            rw.build_kernel(3, 1.0)

    def test_grid_centres(self):
        a = rw.grid_angles(8)
        assert a[0] == pytest.approx(-np.pi + np.pi / 8)
        np.testing.assert_allclose(np.diff(a), 2 * np.pi / 8)


class TestForwardBackward:
    @pytest.mark.parametrize("L,nq", [(1, 8), (2, 6), (3, 8), (4, 5), (4, 8)])
    def test_matches_enumeration(self, L, nq, backend, rng):
        grid = rw.build_kernel(nq, 0.3)
        y = np.exp(1j * rng.uniform(-np.pi, np.pi, L)) + 0.5 * (rng.standard_normal(L) + 1j * rng.standard_normal(L))
        inc = rng.dirichlet([1, 1], L)
        msgs = rw.forward_backward(y, inc, 0.7, grid, backend)
        ref = brute_force_posterior(msgs.local, grid.kernel)
        np.testing.assert_allclose(msgs.posterior, ref, atol=1e-10)

    def test_single_symbol_is_local(self, backend):
        grid = rw.build_kernel(16, 0.1)
        msgs = rw.forward_backward(np.array([0.3 + 0.4j]), uniform_pmfs(1), 0.5, grid, backend)
        np.testing.assert_allclose(msgs.posterior, msgs.local, atol=1e-15)

    def test_messages_normalized(self, backend, rng):
        grid = rw.build_kernel(32, 0.01)
        y = rng.standard_normal(40) + 1j * rng.standard_normal(40)
        m = rw.forward_backward(y, rng.dirichlet([1, 1], 40), 0.3, grid, backend)
        for arr in (m.local, m.forward, m.backward, m.posterior):
            np.testing.assert_allclose(arr.sum(1), 1.0, atol=1e-12)

    def test_point_mass_on_grid(self, backend):
        nq = 20
        grid = rw.build_kernel(nq, 1e-10)
        phi = grid.angles[7]
        y = np.full(30, np.exp(1j * phi))
        inc = np.tile([1.0, 0.0], (30, 1))
        post = rw.forward_backward(y, inc, 1e-3, grid, backend).posterior
        assert np.all(post.argmax(1) == 7) and np.all(post[:, 7] > 1 - 1e-9)

    def test_shift_equivariance(self, backend, rng):
        nq = 16
        grid = rw.build_kernel(nq, 0.05)
        y = rng.standard_normal(12) + 1j * rng.standard_normal(12)
        inc = uniform_pmfs(12)
        a = rw.forward_backward(y, inc, 0.5, grid, backend)
        b = rw.forward_backward(y * np.exp(2j * np.pi / nq), inc, 0.5, grid, backend)
        for x, z in ((a.forward, b.forward), (a.backward, b.backward), (a.posterior, b.posterior)):
            np.testing.assert_allclose(np.roll(x, 1, axis=1), z, atol=1e-12)

    def test_degenerate_flagged(self, backend):
        local = np.zeros((3, 4))
        local[0, 0] = local[1, 2] = local[2, 0] = 1.0
        K = np.eye(4)
        _, _, post, bad = kernels.forward_backward(local, K, backend)
        assert bad > 0
        np.testing.assert_allclose(post.sum(1), 1.0)

    def test_backends_agree(self, rng):
        if not kernels.HAVE_COMPILED:
            pytest.skip("compiled kernels not built")
        grid = rw.build_kernel(100, 0.0034)
        y = rng.standard_normal(534) + 1j * rng.standard_normal(534)
        inc = rng.dirichlet([1, 1], 534)
        a = rw.forward_backward(y, inc, 0.4, grid, "python")
        b = rw.forward_backward(y, inc, 0.4, grid, "compiled")
        np.testing.assert_allclose(a.posterior, b.posterior, rtol=1e-9, atol=1e-14)

    def test_backends_agree_dense_kernel(self, rng):
        # no band structure: the compiled sweep must fall back to the full row
        if not kernels.HAVE_COMPILED:
            pytest.skip("compiled kernels not built")
        K = rng.dirichlet(np.ones(24), 24)
        local = rng.uniform(0.1, 1.0, (60, 24))
        a = kernels.forward_backward(local, K, "python")
        b = kernels.forward_backward(local, K, "compiled")
        for x, y in zip(a[:3], b[:3]):
            np.testing.assert_allclose(x, y, rtol=1e-12)


class TestPhaseMean:
    def test_point_mass(self):
        a = rw.grid_angles(10)
        p = np.zeros((1, 10))
        p[0, 3] = 1
        assert rw.posterior_phase_mean(p, a)[0] == pytest.approx(a[3])

    def test_bimodal_symmetric(self):
        a = rw.grid_angles(10)
        p = np.zeros((1, 10))
        p[0, 2] = p[0, 7] = 0.5
        assert abs(np.sin(rw.posterior_phase_mean(p, a)[0])) < 1e-12

    def test_wrap_divergence(self):
        a = rw.grid_angles(20)
        p = np.zeros((1, 20))
        p[0, 0] = p[0, 19] = 0.5
        assert abs(abs(rw.posterior_phase_mean(p, a, "circular")[0]) - np.pi) < 1e-12
        assert abs(rw.posterior_phase_mean(p, a, "linear")[0]) < 1e-12

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            rw.posterior_phase_mean(np.ones((1, 4)) / 4, rw.grid_angles(4), "median")


class TestUnwrapFit:
    def test_unwrap_example(self):
        np.testing.assert_allclose(rw.unwrap([3.1, -3.1]), [3.1, -3.1 + 2 * np.pi])

    def test_smooth_unchanged(self):
        x = np.linspace(-1, 1, 20)
        np.testing.assert_array_equal(rw.unwrap(x), x)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=50))
    def test_wrap_of_unwrap(self, xs):
        x = np.array(xs)
        u = rw.unwrap(wrap_phase(x))
        np.testing.assert_allclose(np.exp(1j * u), np.exp(1j * x), atol=1e-9)
        assert np.all(np.abs(np.diff(u)) <= np.pi + 1e-12)
        assert u[0] == wrap_phase(x[0])

    def test_exact_quadratic(self):
        k = np.arange(534.0)
        f = rw.quadratic_fit(1.0 + 0.01 * k + 1e-5 * k * k)
        assert abs(f.theta_hat - 1) < 1e-9 and abs(f.omega_hat - 0.01) < 1e-9 and abs(f.epsilon_hat - 1e-5) < 1e-9

    @settings(max_examples=30)
    @given(st.integers(3, 2000), st.floats(-3, 3), st.floats(-0.05, 0.05), st.floats(-1e-4, 1e-4))
    def test_exact_on_any_length(self, n, th, om, ep):
        k = np.arange(float(n))
        f = rw.quadratic_fit(th + om * k + ep * k * k)
        assert abs(f.theta_hat - th) < 1e-9 and abs(f.omega_hat - om) < 1e-9 and abs(f.epsilon_hat - ep) < 1e-9

    def test_constant(self):
        f = rw.quadratic_fit(np.full(10, 0.7))
        assert (f.theta_hat, f.omega_hat, f.epsilon_hat) == pytest.approx((0.7, 0, 0), abs=1e-12)

    def test_too_short(self):
        with pytest.raises(ValueError):
            rw.quadratic_fit([1.0, 2.0])

    def test_ls_covariance(self):
        rng = np.random.default_rng(0)
        k = np.arange(534.0)
        X = np.stack([np.ones_like(k), k, k * k], 1)
        theory = 0.01 * np.linalg.inv(X.T @ X)[2, 2]
        eps = [rw.quadratic_fit(0.1 * rng.standard_normal(534)).epsilon_hat for _ in range(1000)]
        assert 0.5 < np.var(eps) / theory < 2.0


class TestUpward:
    def test_genie_noiseless(self):
        p = ChannelParams(0.4, 0.003, -2e-6)
        k = np.arange(40)
        x = np.where(np.arange(40) % 3 == 0, -1.0, 1.0)
        y = x * np.exp(1j * (p.theta + p.omega * k + p.epsilon * k * k))
        fit = rw.FitResult(p.theta, p.omega, p.epsilon, 0.0)
        up = rw.upward_messages(fit, y, 1e-3, 0)
        np.testing.assert_array_equal(up.argmax(1), (x < 0).astype(int))
        assert up.max(1).min() > 1 - 1e-12

    def test_huge_noise_uniform(self):
        up = rw.upward_messages(rw.FitResult(0, 0, 0, 0), np.ones(5, complex), 1e12, 0)
        np.testing.assert_allclose(up, 0.5, atol=1e-9)

    def test_hand_check(self):
        fit = rw.FitResult(0.2, 0.01, 0.0, 0.0)
        y = np.array([0.0, 0.5 + 0.3j])
        up = rw.upward_messages(fit, y, 0.8, 0)
        phi = 0.21
        l0 = np.exp(-abs(y[1] - np.exp(1j * phi)) ** 2 / 0.8)
        l1 = np.exp(-abs(y[1] + np.exp(1j * phi)) ** 2 / 0.8)
        assert up[1, 0] == pytest.approx(l0 / (l0 + l1), rel=1e-12)


def test_estimator_tracks_noiseless_burst():
    prior = PriorSpec()
    p = ChannelParams(1.0, 0.006, -4e-6)
    k = np.arange(534)
    y = np.exp(1j * (p.theta + p.omega * k + p.epsilon * k * k))
    inc = np.tile([1.0, 0.0], (534, 1))
    est = rw.make_estimator(prior, rw.RWConfig(), 30, 534)(NodeObservation(y, 1e-2), inc, None)
    assert abs(est.omega - p.omega) < 1e-4 and abs(est.epsilon - p.epsilon) < 1e-7
