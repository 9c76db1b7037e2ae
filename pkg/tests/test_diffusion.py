"""Noising, posterior, KL, and loss: closed-form and Monte-Carlo oracles."""

import numpy as np
import pytest

from spectradiff import gradcore as g
from spectradiff.denoiser import Denoiser, DenoiserConfig
from spectradiff.diffusion import (
    GaussianMoments,
    NoisedBatch,
    TrainStepResult,
    gaussian_kl,
    hybrid_loss,
    hybrid_loss_parts,
    model_log_var,
    predict_x0_from_eps,
    q_posterior,
    q_sample,
    train_denoiser,
    train_step,
)
from spectradiff.errors import ContractError
from spectradiff.schedule import VAR_FLOOR, ScheduleConfig, build_schedule


@pytest.fixture(scope="module")
def sched10():
    return build_schedule(ScheduleConfig(T=10))


@pytest.fixture(scope="module")
def sched100():
    return build_schedule(ScheduleConfig(T=100))


class TestQSample:
    def test_zero_noise_scales_x0_exactly(self, sched10):
        x0 = np.array([[0.5, -0.25, 1.0]])
        t = np.array([4])
        b = q_sample(x0, t, np.zeros_like(x0), sched10)
        np.testing.assert_allclose(b.xt, np.sqrt(sched10.alpha_bar[3]) * x0, rtol=1e-15)

    def test_early_step_stays_close_to_x0(self):
        sched = build_schedule(ScheduleConfig(T=1000))
        rng = np.random.default_rng(0)
        x0 = rng.uniform(-1, 1, size=(8, 5))
        eps = rng.standard_normal(x0.shape)
        b = q_sample(x0, np.ones(8, dtype=int), eps, sched)
        bound = np.sqrt(1.0 - sched.alpha_bar[0]) * np.abs(eps) + (1 - np.sqrt(sched.alpha_bar[0])) * np.abs(x0)
        assert np.all(np.abs(b.xt - x0) <= bound + 1e-12)

    def test_out_of_range_t_rejected(self, sched10):
        x0 = np.zeros((1, 3))
        with pytest.raises(ContractError):
            q_sample(x0, np.array([0]), np.zeros_like(x0), sched10)
        with pytest.raises(ContractError):
            q_sample(x0, np.array([11]), np.zeros_like(x0), sched10)

    def test_monte_carlo_moments(self, sched10):
        """Empirical mean/var over 1e5 draws vs (sqrt(abar)*x0, 1-abar), 3 SE."""
        rng = np.random.default_rng(42)
        n = 100_000
        x0 = np.full((n, 1), 0.6)
        t = np.full(n, 5)
        eps = rng.standard_normal((n, 1))
        xt = q_sample(x0, t, eps, sched10).xt[:, 0]
        abar = sched10.alpha_bar[4]
        exp_mean = np.sqrt(abar) * 0.6
        exp_var = 1.0 - abar
        se_mean = np.sqrt(exp_var / n)
        assert abs(xt.mean() - exp_mean) < 3 * se_mean
        se_var = exp_var * np.sqrt(2.0 / (n - 1))
        assert abs(xt.var(ddof=1) - exp_var) < 3 * se_var


class TestQPosterior:
    def test_mean_approaches_xt_when_beta_vanishes(self):
        # large T makes beta_1.. tiny; with x0 == xt the mean collapses onto them
        sched = build_schedule(ScheduleConfig(T=1000))
        x = np.array([[0.3, -0.7]])
        m = q_posterior(x, x, np.array([2]), sched)
        np.testing.assert_allclose(m.mean, x, atol=1e-6)

    def test_variance_floor_at_t1(self, sched10):
        m = q_posterior(np.zeros((2, 3)), np.ones((2, 3)), np.array([1, 1]), sched10)
        np.testing.assert_array_equal(m.var, VAR_FLOOR)

    def test_mean_matches_scalar_recomputation(self, sched10):
        rng = np.random.default_rng(1)
        x0 = rng.uniform(-1, 1, size=(4, 3))
        xt = rng.normal(size=(4, 3))
        t = np.array([2, 5, 7, 10])
        m = q_posterior(x0, xt, t, sched10)
        for i, ti in enumerate(t):
            alpha = sched10.alpha[ti - 1]
            abar = sched10.alpha_bar[ti - 1]
            abar_prev = 1.0 if ti == 1 else sched10.alpha_bar[ti - 2]
            expected = (np.sqrt(alpha) * (1 - abar_prev) * xt[i]
                        + np.sqrt(abar_prev) * (1 - alpha) * x0[i]) / (1 - abar)
            np.testing.assert_allclose(m.mean[i], expected, atol=1e-12)

    def test_variance_equals_schedule_posterior_var(self, sched10):
        t = np.array([2, 3, 9])
        m = q_posterior(np.zeros((3, 4)), np.zeros((3, 4)), t, sched10)
        np.testing.assert_array_equal(m.var, np.broadcast_to(sched10.posterior_var[t - 1][:, None], (3, 4)))


class TestPredictX0:
    def test_true_eps_recovers_x0(self, sched10):
        rng = np.random.default_rng(2)
        x0 = rng.uniform(-1, 1, size=(6, 4))
        t = rng.integers(1, 11, size=6)
        eps = rng.standard_normal(x0.shape)
        b = q_sample(x0, t, eps, sched10)
        np.testing.assert_allclose(predict_x0_from_eps(b.xt, eps, t, sched10, clamp=False), x0, atol=1e-10)

    def test_zero_inputs(self, sched10):
        out = predict_x0_from_eps(np.zeros((1, 3)), np.zeros((1, 3)), np.array([5]), sched10)
        np.testing.assert_array_equal(out, 0.0)

    def test_clamp_bounds_output(self, sched10):
        out = predict_x0_from_eps(np.full((1, 2), 50.0), np.zeros((1, 2)), np.array([10]), sched10)
        assert np.all(out <= 1.0)

    def test_round_trip_over_random_batches(self, sched10):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x0 = rng.uniform(-1, 1, size=(5, 3))
            t = rng.integers(1, 11, size=5)
            eps = rng.standard_normal(x0.shape)
            b = q_sample(x0, t, eps, sched10)
            back = predict_x0_from_eps(b.xt, eps, t, sched10, clamp=False)
            assert np.max(np.abs(back - x0)) < 1e-10


class TestGaussianKL:
    def test_identical_moments_give_zero(self):
        m = GaussianMoments(mean=np.array([[0.3, 1.0]]), var=np.array([[0.5, 2.0]]))
        np.testing.assert_allclose(gaussian_kl(m, m), 0.0, atol=1e-15)

    def test_equal_variance_closed_form(self):
        rng = np.random.default_rng(4)
        mu_p = rng.normal(size=(3, 5))
        mu_q = rng.normal(size=(3, 5))
        var = np.full((3, 5), 0.7)
        kl = gaussian_kl(GaussianMoments(mu_p, var), GaussianMoments(mu_q, var))
        expected = ((mu_p - mu_q) ** 2).sum(axis=1) / (2 * 0.7)
        np.testing.assert_allclose(kl, expected, rtol=1e-12)

    def test_nonpositive_variance_rejected(self):
        good = GaussianMoments(np.zeros((1, 2)), np.ones((1, 2)))
        bad = GaussianMoments(np.zeros((1, 2)), np.array([[1.0, 0.0]]))
        with pytest.raises(ContractError):
            gaussian_kl(good, bad)

    def test_nonnegative_on_random_moment_pairs(self):
        rng = np.random.default_rng(5)
        n = 10_000
        p = GaussianMoments(rng.normal(size=(n, 1)), rng.uniform(0.1, 3.0, size=(n, 1)))
        q = GaussianMoments(rng.normal(size=(n, 1)), rng.uniform(0.1, 3.0, size=(n, 1)))
        kl = gaussian_kl(p, q)
        assert np.all(kl >= 0)
        same = gaussian_kl(p, p)
        assert np.all(np.abs(same) < 1e-12)

    def test_monte_carlo_oracle(self):
        """KL vs E_p[log p - log q] over 1e6 samples, within 3 SE."""
        rng = np.random.default_rng(6)
        mu_p, var_p = 0.4, 0.8
        mu_q, var_q = -0.2, 1.7
        n = 1_000_000
        xs = rng.normal(mu_p, np.sqrt(var_p), size=n)

        def logpdf(x, mu, var):
            return -0.5 * (np.log(2 * np.pi * var) + (x - mu) ** 2 / var)

        diffs = logpdf(xs, mu_p, var_p) - logpdf(xs, mu_q, var_q)
        estimate = diffs.mean()
        se = diffs.std(ddof=1) / np.sqrt(n)
        kl = gaussian_kl(GaussianMoments(np.array([[mu_p]]), np.array([[var_p]])),
                         GaussianMoments(np.array([[mu_q]]), np.array([[var_q]])))[0]
        assert abs(kl - estimate) < 3 * se


def perfect_outputs(batch: NoisedBatch, sched) -> tuple:
    """Oracle denoiser outputs: the injected noise and v matching var_tilde."""
    eps_hat = g.Tensor(batch.eps.copy())
    v = g.Tensor(np.zeros_like(batch.eps))  # v=0 -> log var = log var_tilde(floored)
    return eps_hat, v


class TestHybridLoss:
    def test_perfect_prediction_gives_zero(self, sched10):
        rng = np.random.default_rng(7)
        x0 = rng.uniform(-0.9, 0.9, size=(6, 4))
        t = np.array([1, 2, 4, 6, 8, 10])
        eps = rng.standard_normal(x0.shape)
        batch = q_sample(x0, t, eps, sched10)
        eps_hat, v = perfect_outputs(batch, sched10)
        parts = hybrid_loss_parts(eps_hat, v, batch, sched10, lambda_vlb=0.7)
        assert abs(parts.mse) < 1e-10
        assert abs(parts.vlb) < 1e-10
        assert abs(parts.total.item()) < 1e-10

    def test_lambda_zero_reduces_to_weighted_mse_and_scales_linearly(self, sched10):
        rng = np.random.default_rng(8)
        x0 = rng.uniform(-1, 1, size=(5, 3))
        t = rng.integers(1, 11, size=5)
        eps = rng.standard_normal(x0.shape)
        batch = q_sample(x0, t, eps, sched10)
        eps_hat = g.Tensor(rng.standard_normal(x0.shape))
        v = g.Tensor(np.full(x0.shape, 0.5))
        base = hybrid_loss_parts(eps_hat, v, batch, sched10, lambda_vlb=0.0)
        w = sched10.loss_weight[batch.t - 1]
        manual = np.mean(w * ((eps_hat.data - eps) ** 2).sum(axis=1))
        assert base.total.item() == pytest.approx(manual, rel=1e-12)
        # doubling every weight doubles the MSE part
        doubled = 2.0 * w[:, None]
        err2 = (eps_hat.data - eps) ** 2
        assert np.mean((doubled * err2).sum(axis=1)) == pytest.approx(2 * base.mse, rel=1e-12)

    def test_finite_differences_through_minimal_denoiser(self, sched10):
        """Full loss (KL mean kept differentiable) vs central differences."""
        model = Denoiser(DenoiserConfig(bands=4, num_classes=2, patch_size=2,
                                        hidden=8, depth=2, heads=2), seed=3)
        rng = np.random.default_rng(9)
        for _, tns in model.params.items():
            tns.data = rng.normal(0, 0.3, size=tns.data.shape)
        x0 = rng.uniform(-1, 1, size=(3, 4))
        t = np.array([1, 5, 10])
        y = np.array([0, 1, 1])
        batch = q_sample(x0, t, rng.standard_normal(x0.shape), sched10)
        report = g.gradcheck(
            lambda: hybrid_loss(batch, y, model, sched10, lambda_vlb=0.05, detach_kl_mean=False),
            list(model.params.tensors()))
        assert max(report.values()) < 1e-4

    def test_detached_mean_matches_mean_frozen_oracle(self, sched10):
        """With detach on, the analytic gradient equals the finite-difference
        gradient of the loss where the KL mean is frozen at its base value."""
        model = Denoiser(DenoiserConfig(bands=4, num_classes=2, patch_size=2,
                                        hidden=8, depth=2, heads=2), seed=4)
        rng = np.random.default_rng(10)
        for _, tns in model.params.items():
            tns.data = rng.normal(0, 0.3, size=tns.data.shape)
        x0 = rng.uniform(-1, 1, size=(2, 4))
        t = np.array([3, 8])
        y = np.array([1, 0])
        batch = q_sample(x0, t, rng.standard_normal(x0.shape), sched10)
        lam = 0.1

        # analytic gradients of the detached loss
        model.params.zero_grad()
        g.backward(hybrid_loss(batch, y, model, sched10, lambda_vlb=lam, detach_kl_mean=True))
        analytic = {n: (t_.grad.copy() if t_.grad is not None else np.zeros_like(t_.data))
                    for n, t_ in model.params.items()}

        # freeze the KL mean at the base parameter point
        with g.no_grad():
            eps0, _ = model.apply(batch.xt, batch.t, y)
        alpha = sched10.at("alpha", t)[:, None]
        abar = sched10.at("alpha_bar", t)[:, None]
        coef = sched10.at("beta", t)[:, None] / np.sqrt(1.0 - abar)
        frozen_mu = (batch.xt - coef * eps0.data) / np.sqrt(alpha)
        post = q_posterior(batch.x0, batch.xt, batch.t, sched10)
        log_var_tilde = np.log(post.var)
        w = sched10.at("loss_weight", t)[:, None]

        def frozen_loss() -> float:
            with g.no_grad():
                eps_hat, v = model.apply(batch.xt, batch.t, y)
                err = (eps_hat.data - batch.eps) ** 2
                mse = np.mean((w * err).sum(axis=1))
                log_var = model_log_var(v, batch.t, sched10).data
                kl = 0.5 * (log_var - log_var_tilde
                            + (post.var + (post.mean - frozen_mu) ** 2) * np.exp(-log_var) - 1.0)
                return float(mse + lam * np.mean(kl.sum(axis=1)))

        h = 1e-5
        for name, tns in model.params.items():
            fd = g.fd_gradient(frozen_loss, tns, h)
            assert g.rel_error(analytic[name], fd) < 1e-4, name


class TestTrainStep:
    def make_toy(self, seed=0):
        model = Denoiser(DenoiserConfig(bands=8, num_classes=1, patch_size=4,
                                        hidden=16, depth=2, heads=2), seed=seed)
        sched = build_schedule(ScheduleConfig(T=20))
        x0 = np.tile(np.linspace(-0.5, 0.5, 8), (16, 1))
        y = np.zeros(16, dtype=np.int64)
        return model, sched, x0, y

    def test_zero_lr_leaves_parameters_unchanged(self):
        model, sched, x0, y = self.make_toy()
        before = model.params.state_arrays()
        res = train_step(x0, y, model, sched, opt=None, rng=np.random.default_rng(0))
        assert isinstance(res, TrainStepResult)
        assert np.isfinite(res.loss)
        for name, arr in model.params.state_arrays().items():
            np.testing.assert_array_equal(arr, before[name])

    def test_empty_batch_rejected(self):
        model, sched, _, _ = self.make_toy()
        with pytest.raises(ContractError):
            train_step(np.empty((0, 8)), np.empty(0, dtype=int), model, sched,
                       opt=None, rng=np.random.default_rng(0))

    def test_equal_seeds_give_bit_identical_trajectories(self):
        runs = []
        for _ in range(2):
            model, sched, x0, y = self.make_toy(seed=5)
            train_denoiser(x0, y, model, sched, steps=10, batch_size=8,
                           lr=1e-3, weight_decay=1e-4, seed=123)
            runs.append(model.params.state_arrays())
        for name in runs[0]:
            np.testing.assert_array_equal(runs[0][name], runs[1][name])

    def test_loss_decreases_on_constant_spectrum_toy(self):
        """500 steps on a 1-class constant dataset: >= 50% drop, 3-seed mean."""
        ratios = []
        for seed in range(3):
            model, sched, x0, y = self.make_toy(seed=seed)
            hist = train_denoiser(x0, y, model, sched, steps=500, batch_size=16,
                                  lr=3e-3, weight_decay=0.0, seed=seed)
            losses = np.array([h.loss for h in hist])
            ratios.append(np.mean(losses[-20:]) / np.mean(losses[:20]))
        assert np.mean(ratios) < 0.5
