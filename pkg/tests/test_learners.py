import math
import time

import numpy as np
import pytest
from scipy.special import expit

from streamrx import _backend
from streamrx.belief import (
    DiagCov,
    DlrCov,
    FullCov,
    GaussianBelief,
    SsmHyper,
    as_covariance,
    min_eigenvalue,
    predict,
    prior_belief,
)
from streamrx.errors import CapabilityError, ConfigurationError, NumericalError
from streamrx.learners import (
    BbbOnline,
    BongEf,
    CmEkf,
    Frozen,
    GdOnline,
    LoFi,
    SgdBatch,
    VdEkf,
    _dlr_absorb,
    _diag_step,
    bbb_online_update,
    bong_ef_update,
    bong_lin_update,
    cmekf_update,
    gd_online_update,
    kalman_step,
    linearize,
    lofi_update,
    make_updater,
    online_elbo,
    online_elbo_grad,
    sample_belief,
    sgd_batch_update,
    vdekf_update,
)
from streamrx.network import MlpSpec, forward, score_batch

from conftest import deepsic_input, random_full_belief, random_spd

SPEC = MlpSpec((6, 5, 2))


def sample(rng, spec=SPEC):
    return (deepsic_input(rng, spec.d_in - 2, 2) if spec.d_in > 2 else rng.standard_normal(spec.d_in),
            rng.integers(0, 2, spec.d_out).astype(float))


class TestKalmanStep:
    def test_scalar_example(self):
        mean, sigma = kalman_step(np.zeros(1), np.eye(1), np.array([[1.0]]),
                                  np.array([0.25]), np.array([0.5]))
        # K = 1 / 1.25 = 0.8
        assert mean == pytest.approx([0.4])
        assert sigma[0, 0] == pytest.approx(0.2)

    def test_zero_jacobian_leaves_belief(self, rng):
        b = random_full_belief(rng, 5)
        mean, sigma = kalman_step(b.mean, b.cov.sigma, np.zeros((2, 5)),
                                  np.array([0.2, 0.2]), np.array([0.3, -0.1]))
        assert np.array_equal(mean, b.mean)
        assert np.allclose(sigma, b.cov.sigma, atol=1e-15)

    def test_zero_innovation_keeps_mean_and_contracts(self, rng):
        b = random_full_belief(rng, 5)
        H = rng.standard_normal((2, 5))
        mean, sigma = kalman_step(b.mean, b.cov.sigma, H, np.array([0.2, 0.3]), np.zeros(2))
        assert np.array_equal(mean, b.mean)
        assert np.trace(sigma) < np.trace(b.cov.sigma)
        # posterior never exceeds the prior in the Loewner order
        assert np.linalg.eigvalsh(b.cov.sigma - sigma).min() > -1e-12

    def test_matches_textbook_gain(self, rng):
        b = random_full_belief(rng, 6)
        H = rng.standard_normal((3, 6))
        r = np.array([0.1, 0.2, 0.3])
        e = rng.standard_normal(3)
        S = H @ b.cov.sigma @ H.T + np.diag(r)
        K = b.cov.sigma @ H.T @ np.linalg.inv(S)
        mean, sigma = kalman_step(b.mean, b.cov.sigma, H, r, e)
        assert np.allclose(mean, b.mean + K @ e)
        assert np.allclose(sigma, b.cov.sigma - K @ H @ b.cov.sigma)
        assert np.array_equal(sigma, sigma.T)

    def test_innovation_failure_raises(self):
        with pytest.raises(NumericalError) as info:
            kalman_step(np.zeros(2), -np.eye(2), np.eye(2), np.zeros(2), np.zeros(2))
        assert "min_eig" in info.value.diagnostics


class TestCmEkf:
    def test_linearization_floors_variance(self, rng):
        spec = MlpSpec((1, 1))
        lin = linearize(spec, np.array([100.0, 0.0]), np.array([1.0]), [1.0])
        assert lin.r[0] == 1e-6
        with pytest.raises(ConfigurationError):
            linearize(spec, np.zeros(2), np.array([1.0]), [1.0, 0.0])

    def test_equals_information_form(self, rng):
        for _ in range(10):
            b = random_full_belief(rng, SPEC.n_params)
            x, bits = sample(rng)
            a, c = cmekf_update(b, SPEC, x, bits), bong_lin_update(b, SPEC, x, bits)
            assert np.allclose(a.mean, c.mean, atol=1e-9)
            assert np.allclose(a.cov.sigma, c.cov.sigma, atol=1e-9)

    def test_fused_step_equals_predict_then_update(self, rng):
        u = CmEkf(SsmHyper(0.98, 1e-3, 0.5))
        state = u.init_state(SPEC.init_params(rng))
        for _ in range(5):
            x, bits = sample(rng)
            want = cmekf_update(predict(state, u.hyper), SPEC, x, bits)
            got = u.step(state, SPEC, x, bits)
            assert got is state                     # buffers are reused
            assert np.allclose(got.mean, want.mean, atol=1e-13)
            assert np.allclose(got.cov.sigma, want.cov.sigma, atol=1e-13)
            assert np.array_equal(got.cov.sigma, got.cov.sigma.T)

    def test_posterior_contraction(self, rng):
        u = CmEkf(SsmHyper(gamma=1.0, sigma2=0.0))
        state = u.init_state(SPEC.init_params(rng))
        x, bits = sample(rng)
        traces = [np.trace(state.cov.sigma)]
        for _ in range(30):
            state = u.step(state, SPEC, x, bits)
            traces.append(np.trace(state.cov.sigma))
        assert all(b <= a + 1e-12 for a, b in zip(traces, traces[1:]))

    @pytest.mark.parametrize("mu,var,x,bit", [((0.0, 0.0), 1.0, 1.0, 1.0),
                                              ((0.5, -0.2), 0.5, 1.5, 0.0),
                                              ((0.3, 0.1), 1.0, -1.0, 1.0)])
    def test_one_step_against_quadrature_posterior(self, mu, var, x, bit):
        spec = MlpSpec((1, 1))       # logistic regression: weight and bias
        mu = np.array(mu)
        post = cmekf_update(GaussianBelief(mu, FullCov(var * np.eye(2))), spec,
                            np.array([x]), np.array([bit]))
        g = np.linspace(-8, 8, 801)
        W, Bb = np.meshgrid(g, g, indexing="ij")
        prior = np.exp(-0.5 * ((W - mu[0]) ** 2 + (Bb - mu[1]) ** 2) / var)
        p = expit(W * x + Bb)
        w = prior * (p if bit else 1 - p)
        w /= w.sum()
        exact = np.array([(w * W).sum(), (w * Bb).sum()]) - mu
        shift = post.mean - mu
        assert np.abs(shift - exact).max() <= 0.1 * np.abs(exact).max()

    def test_capability_cap(self):
        with pytest.raises(CapabilityError):
            CmEkf(max_full_params=10).init_state(np.zeros(11))
        # diagonal rules accept the same size
        VdEkf(max_full_params=10).init_state(np.zeros(11))

    def test_requires_full_belief(self, rng):
        b = prior_belief(np.zeros(SPEC.n_params), SsmHyper(), "diag")
        with pytest.raises(ConfigurationError):
            cmekf_update(b, SPEC, *sample(rng))


class TestVdEkf:
    def test_scalar_matches_full(self):
        m, v = _diag_step(np.zeros(1), np.ones(1), np.array([[1.0]]), np.array([0.25]),
                          np.array([0.5]))
        assert m == pytest.approx([0.4]) and v == pytest.approx([0.2])

    def test_independent_coordinates_match_full(self, rng):
        P = 4
        H = np.zeros((2, P))
        H[0, 1], H[1, 3] = 0.7, -1.3
        var = rng.uniform(0.2, 2.0, P)
        mean = rng.standard_normal(P)
        r, e = np.array([0.2, 0.3]), np.array([0.4, -0.6])
        m_full, S_full = kalman_step(mean, np.diag(var), H, r, e)
        m_diag, v_diag = _diag_step(mean, var, H, r, e)
        assert np.allclose(m_full, m_diag, atol=1e-10)
        assert np.allclose(np.diag(S_full), v_diag, atol=1e-10)

    def test_zero_jacobian(self, rng):
        var, mean = rng.uniform(0.1, 1, 3), rng.standard_normal(3)
        m, v = _diag_step(mean, var, np.zeros((2, 3)), np.array([0.2, 0.2]), np.array([1.0, -1.0]))
        assert np.array_equal(m, mean) and np.allclose(v, var)

    def test_network_update_is_precision_diagonal(self, rng):
        b = prior_belief(SPEC.init_params(rng), SsmHyper(prior_var=0.5), "diag")
        x, bits = sample(rng)
        lin = linearize(SPEC, b.mean, x, bits)
        post = vdekf_update(b, SPEC, x, bits)
        prec = 1 / b.cov.var + (lin.H**2 / lin.r[:, None]).sum(axis=0)
        assert np.allclose(post.cov.var, 1 / prec)
        assert np.allclose(post.mean, b.mean + post.cov.var * (lin.H.T @ (lin.innov / lin.r)))

    def test_step_equals_predict_then_update(self, rng):
        u = VdEkf(SsmHyper(0.97, 1e-3))
        state = u.init_state(SPEC.init_params(rng))
        for _ in range(5):
            x, bits = sample(rng)
            want = vdekf_update(predict(state, u.hyper), SPEC, x, bits)
            state = u.step(state, SPEC, x, bits)
            assert np.allclose(state.mean, want.mean, atol=1e-14)
            assert np.allclose(state.cov.var, want.cov.var, atol=1e-14)


class TestLoFi:
    def test_full_rank_matches_cmekf(self, rng):
        h = SsmHyper(0.99, 1e-3, 0.5)
        theta = SPEC.init_params(rng)
        x, bits = sample(rng)
        a = cmekf_update(predict(CmEkf(h).init_state(theta), h), SPEC, x, bits)
        for R in (2, 3, 6):
            b = lofi_update(predict(LoFi(h, rank=R).init_state(theta), h), SPEC, x, bits)
            assert np.allclose(a.mean, b.mean, atol=1e-8)
            assert np.allclose(a.cov.sigma, as_covariance(b), atol=1e-8)

    def test_rank_zero_matches_vdekf(self, rng):
        h = SsmHyper(0.99, 1e-3, 0.5)
        theta = SPEC.init_params(rng)
        lo, vd = LoFi(h, rank=0), VdEkf(h)
        s_lo, s_vd = lo.init_state(theta), vd.init_state(theta)
        for _ in range(20):
            x, bits = sample(rng)
            s_lo, s_vd = lo.step(s_lo, SPEC, x, bits), vd.step(s_vd, SPEC, x, bits)
            assert np.allclose(s_lo.mean, s_vd.mean, atol=1e-12)
            assert np.allclose(1 / s_lo.cov.prec_diag, s_vd.cov.var, atol=1e-12)

    def test_absorb_zero_factor_keeps_precision(self, rng):
        c = DlrCov(rng.uniform(0.5, 2, 6), rng.standard_normal((6, 2)))
        new = _dlr_absorb(c, np.zeros((6, 2)))
        assert np.allclose(new.W @ new.W.T, c.W @ c.W.T, atol=1e-12)
        assert np.allclose(new.prec_diag, c.prec_diag, atol=1e-12)

    def test_absorb_keeps_precision_diagonal_and_top_directions(self, rng):
        P, R = 12, 3
        c = DlrCov(rng.uniform(0.5, 2, P), rng.standard_normal((P, R)))
        A = rng.standard_normal((P, 2))
        new = _dlr_absorb(c, A)
        assert new.W.shape == (P, R)
        exact = np.diag(c.prec_diag) + c.W @ c.W.T + A @ A.T
        approx = np.diag(new.prec_diag) + new.W @ new.W.T
        assert np.allclose(np.diag(approx), np.diag(exact), atol=1e-10)
        # W W^T is the best rank-R approximation of [W, A][W, A]^T
        M = np.hstack([c.W, A])
        s = np.linalg.svd(M, compute_uv=False)
        assert np.allclose(np.sort(np.linalg.eigvalsh(new.W @ new.W.T))[-R:], np.sort(s[:R] ** 2))

    def test_exact_when_rank_suffices(self, rng):
        P = 8
        c = DlrCov(rng.uniform(0.5, 2, P), np.hstack([rng.standard_normal((P, 2)), np.zeros((P, 2))]))
        A = rng.standard_normal((P, 2))
        new = _dlr_absorb(c, A)
        assert np.allclose(np.diag(new.prec_diag) + new.W @ new.W.T,
                           np.diag(c.prec_diag) + c.W @ c.W.T + A @ A.T, atol=1e-10)

    @pytest.mark.parametrize("R", [0, 1, 4, 10])
    def test_step_equals_predict_then_update(self, R, rng):
        spec = MlpSpec((16, 24, 2))
        u = LoFi(SsmHyper(0.99, 1e-3, 0.5), rank=R)
        state = u.init_state(spec.init_params(rng))
        for _ in range(12):
            x, bits = sample(rng, spec)
            want = lofi_update(predict(state, u.hyper), spec, x, bits)
            state = u.step(state, spec, x, bits)
            assert np.allclose(state.mean, want.mean, atol=1e-12)
            assert np.allclose(as_covariance(state), as_covariance(want), atol=1e-12)


class TestBongEf:
    @pytest.mark.parametrize("kind", ["full", "diag", "dlr"])
    def test_zero_score_leaves_belief(self, kind, rng):
        b = prior_belief(rng.standard_normal(5), SsmHyper(prior_var=0.4), kind, rank=2)
        post = bong_ef_update(b, None, None, None, 6, rng, score_fn=lambda t: np.zeros_like(t))
        assert np.allclose(post.mean, b.mean, atol=1e-15)
        assert np.allclose(as_covariance(post), as_covariance(b), atol=1e-15)

    @staticmethod
    def _toy(rng, antithetic):
        # y ~ N(a^T theta, s^2); score a (y - a^T theta) / s^2
        a, s2, y = np.array([0.5, -1.0, 2.0]), 0.7, 1.3
        mean, var = np.array([0.2, 0.1, -0.3]), np.array([0.3, 0.5, 0.2])
        M = 10_000
        post = bong_ef_update(GaussianBelief(mean, DiagCov(var)), None, None, None, M, rng,
                              score_fn=lambda th: np.outer(y - th @ a, a) / s2,
                              antithetic=antithetic)
        m, w = y - a @ mean, (a * a) @ var
        e2 = (1 / post.cov.var - 1 / var) * s2**2 / a**2   # mean of (y - a^T theta)^2
        return e2, m * m + w, m, w, M

    def test_fisher_increment_monte_carlo(self, rng):
        e2, want, m, w, M = self._toy(rng, antithetic=False)
        assert np.allclose(e2, e2[0])
        assert abs(e2[0] - want) < 3 * math.sqrt((2 * w * w + 4 * m * m * w) / M)

    def test_fisher_increment_monte_carlo_antithetic(self, rng):
        e2, want, m, w, M = self._toy(rng, antithetic=True)
        # a pair mu +- z contributes m^2 + u^2 with u ~ N(0, w)
        assert abs(e2[0] - want) < 3 * math.sqrt(4 * w * w / M)

    def test_logistic_score_by_hand(self):
        spec = MlpSpec((1, 1))
        b = GaussianBelief(np.array([0.4, -0.1]), DiagCov(np.array([0.3, 0.2])))
        x, bit = np.array([1.7]), np.array([1.0])
        post = bong_ef_update(b, spec, x, bit, 4, np.random.default_rng(7))
        thetas = sample_belief(b, 4, np.random.default_rng(7))
        g = np.array([(bit[0] - expit(w * x[0] + c)) * np.array([x[0], 1.0]) for w, c in thetas])
        assert np.allclose(1 / post.cov.var - 1 / b.cov.var, (g * g).mean(axis=0))
        assert np.allclose(post.mean, b.mean + post.cov.var * g.mean(axis=0))

    def test_antithetic_samples(self, rng):
        b = random_full_belief(rng, 4)
        th = sample_belief(b, 6, rng)
        assert np.allclose(th[:3] + th[3:], 2 * b.mean)
        odd = sample_belief(b, 5, rng)
        assert odd.shape == (5, 4)

    def test_dlr_samples_have_the_belief_covariance(self, rng):
        c = DlrCov(rng.uniform(1, 3, 4), rng.standard_normal((4, 2)))
        b = GaussianBelief(np.zeros(4), c)
        th = sample_belief(b, 100_000, rng, antithetic=False)
        assert np.allclose(np.cov(th.T), as_covariance(b), atol=0.02)

    @pytest.mark.parametrize("kind", ["full", "diag", "dlr"])
    def test_step_equals_predict_then_update(self, kind, rng):
        spec = MlpSpec((16, 24, 2))
        u = BongEf(SsmHyper(0.99, 1e-3, 0.5), kind=kind, rank=4)
        state = u.init_state(spec.init_params(rng))
        for i in range(4):
            x, bits = sample(rng, spec)
            want = u.update(predict(state, u.hyper), spec, x, bits, np.random.default_rng(i))
            state = u.step(state, spec, x, bits, np.random.default_rng(i))
            assert np.allclose(state.mean, want.mean, atol=1e-12)
            assert np.allclose(as_covariance(state), as_covariance(want), atol=1e-12)

    def test_needs_a_sample(self, rng):
        with pytest.raises(ConfigurationError):
            bong_ef_update(random_full_belief(rng, 2), None, None, None, 0, rng,
                           score_fn=lambda t: t)


class TestBbb:
    def setup_method(self):
        self.rng = np.random.default_rng(3)
        self.b = prior_belief(SPEC.init_params(self.rng), SsmHyper(prior_var=0.5), "diag")
        self.x, self.bits = sample(self.rng)

    def test_zero_iterations_and_zero_rate(self):
        for kw in (dict(iters=0), dict(lr=0.0)):
            post = bbb_online_update(self.b, SPEC, self.x, self.bits, **kw)
            assert np.array_equal(post.mean, self.b.mean)
            assert np.array_equal(post.cov.var, self.b.cov.var)

    def test_kl_vanishes_at_prediction(self):
        lin = linearize(SPEC, self.b.mean, self.x, self.bits)
        v = self.b.cov.var
        nll = 0.5 * np.sum((lin.innov**2 + lin.H**2 @ v) / lin.r)
        assert online_elbo(self.b.mean, np.log(v), self.b.mean, v, lin) == pytest.approx(nll)

    def test_gradient_matches_finite_differences(self):
        lin = linearize(SPEC, self.b.mean, self.x, self.bits)
        mu = self.b.mean + 0.1 * self.rng.standard_normal(SPEC.n_params)
        lv = np.log(self.b.cov.var) + 0.2 * self.rng.standard_normal(SPEC.n_params)
        g_mu, g_lv = online_elbo_grad(mu, lv, self.b.mean, self.b.cov.var, lin)
        f = lambda m, l: online_elbo(m, l, self.b.mean, self.b.cov.var, lin)
        for p in range(0, SPEC.n_params, 7):
            e = np.zeros(SPEC.n_params)
            e[p] = 1e-6
            assert (f(mu + e, lv) - f(mu - e, lv)) / 2e-6 == pytest.approx(g_mu[p], abs=1e-6)
            assert (f(mu, lv + e) - f(mu, lv - e)) / 2e-6 == pytest.approx(g_lv[p], abs=1e-6)

    def test_matches_hand_iterated_descent(self):
        lin = linearize(SPEC, self.b.mean, self.x, self.bits)
        f = lambda z: online_elbo(z[: SPEC.n_params], z[SPEC.n_params:], self.b.mean,
                                  self.b.cov.var, lin)
        z = np.concatenate([self.b.mean, np.log(self.b.cov.var)])
        for _ in range(3):
            g = np.empty_like(z)
            for p in range(z.size):
                e = np.zeros_like(z)
                e[p] = 1e-6
                g[p] = (f(z + e) - f(z - e)) / 2e-6
            z = z - 0.05 * g
        post = bbb_online_update(self.b, SPEC, self.x, self.bits, iters=3, lr=0.05)
        assert np.allclose(post.mean, z[: SPEC.n_params], atol=1e-7)
        assert np.allclose(np.log(post.cov.var), z[SPEC.n_params:], atol=1e-7)

    def test_loss_decreases(self):
        lin = linearize(SPEC, self.b.mean, self.x, self.bits)
        post = bbb_online_update(self.b, SPEC, self.x, self.bits, iters=10, lr=0.01)
        before = online_elbo(self.b.mean, np.log(self.b.cov.var), self.b.mean, self.b.cov.var, lin)
        after = online_elbo(post.mean, np.log(post.cov.var), self.b.mean, self.b.cov.var, lin)
        assert after < before

    def test_divergence_is_reported(self):
        with pytest.raises(NumericalError):
            bbb_online_update(self.b, SPEC, self.x, self.bits, iters=50, lr=1e6)


class TestGradientBaselines:
    def test_perfect_prediction_is_a_fixed_point(self):
        spec = MlpSpec((1, 1))
        theta = np.array([40.0, 0.0])
        out = gd_online_update(theta, spec, np.array([1.0]), [1.0], iters=10, lr=0.1)
        assert np.allclose(out, theta, atol=1e-8, rtol=0)

    def test_logistic_single_step(self, rng):
        spec = MlpSpec((3, 1))
        theta, x = rng.standard_normal(4), rng.standard_normal(3)
        ell = forward(spec, theta, x)[0]
        out = gd_online_update(theta, spec, x, [0.0], iters=1, lr=0.3)
        assert np.allclose(out, theta - 0.3 * (ell - 0.0) * np.append(x, 1.0))

    def test_zero_rate(self, rng):
        theta = SPEC.init_params(rng)
        x, bits = sample(rng)
        assert np.array_equal(gd_online_update(theta, SPEC, x, bits, lr=0.0), theta)
        X = np.array([sample(rng)[0] for _ in range(8)])
        B = rng.integers(0, 2, (8, 2))
        assert np.array_equal(sgd_batch_update(theta, SPEC, X, B, lr=0.0), theta)

    def test_single_sample_sgd_is_gd(self, rng):
        theta = SPEC.init_params(rng)
        x, bits = sample(rng)
        a = sgd_batch_update(theta, SPEC, x[None], bits[None], epochs=5, batch=1, lr=0.05)
        b = gd_online_update(theta, SPEC, x, bits, iters=5, lr=0.05)
        assert np.allclose(a, b, atol=1e-15)

    def test_sgd_uses_mean_batch_gradient(self, rng):
        theta = SPEC.init_params(rng)
        X = np.array([sample(rng)[0] for _ in range(4)])
        B = rng.integers(0, 2, (4, 2)).astype(float)
        out = sgd_batch_update(theta, SPEC, X, B, epochs=1, batch=4, lr=0.2)
        g = np.mean([score_batch(SPEC, theta, X[i], B[i])[0] for i in range(4)], axis=0)
        assert np.allclose(out, theta + 0.2 * g)

    def test_sgd_empty_buffer(self, rng):
        theta = SPEC.init_params(rng)
        assert np.array_equal(sgd_batch_update(theta, SPEC, np.zeros((0, 6)), np.zeros((0, 2))), theta)

    def test_sgd_is_deterministic_given_seed(self, rng):
        theta = SPEC.init_params(rng)
        X = np.array([sample(rng)[0] for _ in range(10)])
        B = rng.integers(0, 2, (10, 2))
        a = sgd_batch_update(theta, SPEC, X, B, epochs=2, batch=3, rng=np.random.default_rng(4))
        b = sgd_batch_update(theta, SPEC, X, B, epochs=2, batch=3, rng=np.random.default_rng(4))
        c = sgd_batch_update(theta, SPEC, X, B, epochs=2, batch=3, rng=np.random.default_rng(5))
        assert np.array_equal(a, b) and not np.array_equal(a, c)


@pytest.mark.parametrize("name,kw", [("cm-ekf", {}), ("vd-ekf", {}), ("lo-fi", {"rank": 3}),
                                     ("bong-ef", {"kind": "diag"}), ("bong-ef", {"kind": "dlr", "rank": 3}),
                                     ("bong-ef", {"kind": "full"}), ("bbb", {})])
def test_beliefs_stay_psd_and_finite(name, kw, rng):
    u = make_updater(name, SsmHyper(), **kw)
    state = u.init_state(SPEC.init_params(rng))
    for _ in range(200):
        x, bits = sample(rng)
        state = u.step(state, SPEC, x, bits, rng)
    assert state.is_finite()
    assert min_eigenvalue(state) >= -1e-9


def test_factory():
    assert isinstance(make_updater("lo-fi", rank=4), LoFi)
    assert make_updater("cm-ekf", SsmHyper(0.9)).hyper.gamma == 0.9
    assert isinstance(make_updater("none"), Frozen)
    assert isinstance(make_updater("gd", iters=3), GdOnline)
    assert not make_updater("sgd").streaming and isinstance(make_updater("sgd"), SgdBatch)
    assert isinstance(make_updater("bbb"), BbbOnline)
    with pytest.raises(ConfigurationError):
        make_updater("adam")
    with pytest.raises(ConfigurationError):
        make_updater("cm-ekf", rank=3)


def test_frozen_updater_never_moves(rng):
    u = make_updater("none")
    theta = SPEC.init_params(rng)
    assert np.array_equal(u.step(u.init_state(theta), SPEC, *sample(rng)), theta)


def _exponent(fn, sizes, repeat=5):
    times = []
    for P in sizes:
        run = fn(P)
        run()
        best = float("inf")
        for _ in range(repeat):
            n = max(3, int(2e5 / P**1.5))
            t0 = time.perf_counter()
            for _ in range(n):
                run()
            best = min(best, (time.perf_counter() - t0) / n)
        times.append(best)
    real_P = [fn.n_params(P) for P in sizes]
    return float(np.polyfit(np.log(real_P), np.log(times), 1)[0])


def _module(P):
    hidden = max(1, round((P - 2) / 19))
    return MlpSpec((16, hidden, 2))


def test_cmekf_cost_is_quadratic():
    def make(P):
        spec = _module(P)
        rng = np.random.default_rng(0)
        b = predict(CmEkf().init_state(spec.init_params(rng)), SsmHyper())
        x, bits = deepsic_input(rng, 10, 6), np.array([1.0, 0.0])
        return lambda: cmekf_update(b, spec, x, bits)

    make.n_params = lambda P: _module(P).n_params
    k = _exponent(make, (64, 256, 1024))
    assert 1.6 <= k <= 2.4, k


def test_lofi_cost_is_subquadratic():
    def make(P):
        spec = _module(P)
        rng = np.random.default_rng(0)
        u = LoFi(rank=10)
        b = u.init_state(spec.init_params(rng))
        x, bits = deepsic_input(rng, 10, 6), np.array([1.0, 0.0])
        return lambda: u.step(b, spec, x, bits)

    make.n_params = lambda P: _module(P).n_params
    k = _exponent(make, (256, 1024, 4096))
    assert k < 1.5, k
