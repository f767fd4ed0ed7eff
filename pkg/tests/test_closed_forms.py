import math

import numpy as np
import pytest
from scipy import optimize, stats
from scipy.integrate import trapezoid

from engine.closed_forms import (
    attenuation_factor,
    meb_conditional,
    mec_conditional,
    mec_marginal_w,
    mec_scaled_conditional,
    naive_glm_fit,
)
from engine.errors import InvalidParameterError, IRLSDivergenceError, RankDeficiencyError


def normal_logpdf(x, mean, precision):
    return stats.norm.logpdf(x, loc=mean, scale=1.0 / np.sqrt(precision))


def test_classical_conditional_worked_case():
    law = mec_conditional(np.array([4.0]), alpha_0=1.0, tau_x=2.0, tau_u=3.0)
    assert law.mean[0] == pytest.approx(2.8)
    assert law.precision_diag[0] == pytest.approx(5.0)


def test_proxy_at_exposure_mean_leaves_it_unchanged():
    law = mec_conditional(np.full(4, 1.5), alpha_0=1.5, tau_x=0.3, tau_u=7.0, d=np.array([1.0, 2.0, 3.0, 4.0]))
    np.testing.assert_allclose(law.mean, 1.5)


def test_error_free_limit():
    w = np.array([-1.0, 0.2, 3.0])
    law = mec_conditional(w, alpha_0=0.0, tau_x=1.0, tau_u=1e12)
    np.testing.assert_allclose(law.mean, w, atol=1e-4)


def test_conditional_matches_numerical_posterior(rng):
    for _ in range(100):
        alpha_0, w = rng.uniform(-2, 2, size=2)
        tau_x, tau_u = rng.uniform(0.5, 5.0, size=2)
        d = rng.uniform(0.5, 2.0)
        law = mec_conditional(np.array([w]), alpha_0, tau_x, tau_u, d)
        s = 1.0 / math.sqrt(min(tau_x, tau_u * d))
        grid = np.linspace(min(alpha_0, w) - 8 * s, max(alpha_0, w) + 8 * s, 2001)
        density = np.exp(normal_logpdf(grid, alpha_0, tau_x) + normal_logpdf(w, grid, tau_u * d))
        total = trapezoid(density, grid)
        mean = trapezoid(grid * density, grid) / total
        variance = trapezoid((grid - mean) ** 2 * density, grid) / total
        assert law.mean[0] == pytest.approx(mean, abs=1e-6)
        assert 1.0 / law.precision_diag[0] == pytest.approx(variance, rel=1e-5)


def test_joint_factorization(rng):
    n = 50
    x, w = rng.normal(size=n), rng.normal(size=n)
    alpha_0 = 0.4
    tau_x, tau_u = 1.7, 3.2
    d = rng.uniform(0.2, 3.0, size=n)
    joint = normal_logpdf(x, alpha_0, tau_x) + normal_logpdf(w, x, tau_u * d)
    factored = (mec_conditional(w, alpha_0, tau_x, tau_u, d).logpdf(x)
                + mec_marginal_w(alpha_0, tau_x, tau_u, d).logpdf(w))
    np.testing.assert_allclose(joint, factored, rtol=0, atol=1e-10)


def test_marginal_proxy_variance():
    assert mec_marginal_w(0.0, 2.0, 2.0).variance[0] == pytest.approx(1.0)
    law = mec_marginal_w(1.0, 4.0, 5.0, d=np.array([1.0, 0.5]))
    np.testing.assert_allclose(law.variance, [1 / 4 + 1 / 5, 1 / 4 + 1 / 2.5])
    np.testing.assert_allclose(law.mean, 1.0)


def test_scaled_conditional():
    w = np.array([0.5, 2.0])
    base = mec_conditional(w, 1.0, 2.0, 3.0)
    same = mec_scaled_conditional(w, 1.0, 2.0, 3.0, beta_x=1.0)
    np.testing.assert_allclose(same.mean, base.mean)
    np.testing.assert_allclose(same.precision, base.precision_diag)
    doubled = mec_scaled_conditional(w, 1.0, 2.0, 3.0, beta_x=2.0)
    np.testing.assert_allclose(doubled.mean, 2 * base.mean)
    np.testing.assert_allclose(doubled.precision, base.precision_diag / 4)


def test_scaled_conditional_matches_draws(rng):
    w = np.array([1.2])
    base = mec_conditional(w, 0.0, 1.0, 4.0)
    draws = -1.5 * rng.normal(base.mean[0], 1 / math.sqrt(base.precision_diag[0]), 100_000)
    law = mec_scaled_conditional(w, 0.0, 1.0, 4.0, beta_x=-1.5)
    sd = math.sqrt(law.variance[0])
    assert draws.mean() == pytest.approx(law.mean[0], abs=4 * sd / math.sqrt(len(draws)))
    assert draws.std() == pytest.approx(sd, rel=0.01)


def test_berkson_conditional():
    law = meb_conditional(np.array([1.0]), tau_u=4.0, beta_x=2.0)
    assert law.mean[0] == 2.0
    assert law.precision[0] == 1.0
    unit = meb_conditional(np.array([0.3, -0.1]), tau_u=5.0, beta_x=1.0, d=np.array([1.0, 2.0]))
    np.testing.assert_allclose(unit.mean, [0.3, -0.1])
    np.testing.assert_allclose(unit.precision, [5.0, 10.0])


@pytest.mark.parametrize("call", [
    lambda: mec_scaled_conditional(np.ones(2), 0.0, 1.0, 1.0, beta_x=0.0),
    lambda: meb_conditional(np.ones(2), 1.0, beta_x=0.0),
    lambda: mec_conditional(np.ones(2), 0.0, tau_x=0.0, tau_u=1.0),
    lambda: mec_conditional(np.ones(2), 0.0, tau_x=1.0, tau_u=1.0, d=np.array([1.0, -1.0])),
    lambda: mec_marginal_w(0.0, 1.0, -2.0),
    lambda: attenuation_factor(1.0, 0.0),
])
def test_invalid_parameters(call):
    with pytest.raises(InvalidParameterError):
        call()


def test_attenuation_factor():
    assert attenuation_factor(3.0, 3.0) == 0.5
    assert attenuation_factor(1.0, 1e12) == pytest.approx(1.0)
    assert 0 < attenuation_factor(10.0, 0.1) < 0.01


def test_naive_slope_is_attenuated(rng):
    n = 5000
    x = rng.normal(size=n)
    w = x + rng.normal(size=n)
    y = x + 0.1 * rng.normal(size=n)
    fit = naive_glm_fit(y, w)
    slope, se = fit.estimate("beta_x")
    assert abs(slope - attenuation_factor(1.0, 1.0)) < 3 * se


def test_berkson_slope_is_unbiased(rng):
    n = 5000
    w = rng.normal(size=n)
    x = w + rng.normal(scale=0.5, size=n)
    y = 1.0 - 0.8 * x + 0.3 * rng.normal(size=n)
    slope, se = naive_glm_fit(y, w).estimate("beta_x")
    assert abs(slope + 0.8) < 3 * se


def test_variance_identities(rng):
    n = 100_000
    tau_x, tau_u = 2.0, 5.0
    x = rng.normal(scale=1 / math.sqrt(tau_x), size=n)
    w = x + rng.normal(scale=1 / math.sqrt(tau_u), size=n)
    expected = 1 / tau_x + 1 / tau_u
    assert w.var() == pytest.approx(expected, abs=3 * expected * math.sqrt(2 / n))

    w = rng.normal(scale=1.0, size=n)
    x = w + rng.normal(scale=1 / math.sqrt(tau_u), size=n)
    expected = w.var() + 1 / tau_u
    assert x.var() == pytest.approx(expected, abs=3 * (1 + 1 / tau_u) * math.sqrt(2 / n))


def test_linear_fit_is_least_squares(rng):
    n = 200
    w = rng.normal(size=n)
    z = rng.normal(size=(n, 2))
    y = 0.5 + 1.5 * w - z @ np.array([0.3, 0.7]) + 0.2 * rng.normal(size=n)
    fit = naive_glm_fit(y, w, z, names=("a", "b"))
    X = np.column_stack([np.ones(n), w, z])
    ols = np.linalg.solve(X.T @ X, X.T @ y)
    np.testing.assert_allclose(fit.coef, ols, rtol=0, atol=1e-10)
    assert fit.names == ("beta_0", "beta_x", "beta_a", "beta_b")
    sigma2 = np.sum((y - X @ ols) ** 2) / (n - 4)
    np.testing.assert_allclose(fit.se, np.sqrt(np.diag(sigma2 * np.linalg.inv(X.T @ X))), rtol=1e-8)


def test_replicated_proxies_are_averaged(rng):
    n = 100
    w = rng.normal(size=(2, n))
    y = 1.0 + w.mean(axis=0) + 0.1 * rng.normal(size=n)
    w[1, 3] = np.nan
    fit = naive_glm_fit(y, w)
    averaged = naive_glm_fit(y, np.nanmean(w, axis=0))
    np.testing.assert_allclose(fit.coef, averaged.coef)


def test_separated_logistic_data_diverge():
    w = np.array([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0])
    y = np.array([0, 0, 0, 1, 1, 1])
    with pytest.raises(IRLSDivergenceError):
        naive_glm_fit(y, w, family="binomial")


def test_poisson_fit_matches_direct_maximization():
    w = np.linspace(0.0, 1.0, 30)
    y = np.round(np.exp(1.0 + 2.0 * w))
    fit = naive_glm_fit(y, w, family="poisson")

    X = np.column_stack([np.ones_like(w), w])

    def negative_log_likelihood(beta):
        eta = X @ beta
        return float(np.sum(np.exp(eta) - y * eta))

    def gradient(beta):
        return X.T @ (np.exp(X @ beta) - y)

    direct = optimize.minimize(negative_log_likelihood, np.zeros(2), jac=gradient, method="BFGS",
                               options={"gtol": 1e-10})
    np.testing.assert_allclose(fit.coef, direct.x, atol=1e-5)
    np.testing.assert_allclose(fit.coef, [1.0, 2.0], atol=0.1)


def test_binomial_fit_with_trials(rng):
    n = 400
    w = rng.normal(size=n)
    trials = rng.integers(1, 6, size=n)
    y = rng.binomial(trials, 1 / (1 + np.exp(-(0.2 + 0.9 * w))))
    fit = naive_glm_fit(y, w, family="binomial", trials=trials)
    slope, se = fit.estimate("beta_x")
    assert abs(slope - 0.9) < 4 * se
    assert fit.iterations < 20


def test_rank_deficient_design():
    w = np.arange(10.0)
    with pytest.raises(RankDeficiencyError):
        naive_glm_fit(np.ones(10), w, z=2 * w)


def test_naive_residual_variance_is_inflated(rng):
    n = 2000
    x = rng.normal(size=n)
    w = x + rng.normal(size=n)
    y = 1.0 + 2.0 * x + 0.3 * rng.normal(size=n)
    naive = naive_glm_fit(y, w)
    true_model = naive_glm_fit(y, x)
    assert naive.deviance / (n - 2) > 5 * true_model.deviance / (n - 2)
