from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError
from scipy import stats

from conftest import study_frame
from dataset import Dataset
from engine.errors import NotPositiveDefiniteError, UnsupportedModelError
from engine.inla import explore_grid, hyper_marginal, latent_marginal
from engine.mcmc import (
    ChainConfig,
    ChainState,
    SamplerData,
    _x_log_target,
    alpha_conditional,
    beta_proposal_factor,
    effective_sample_size,
    gibbs_alpha,
    gibbs_tau_x,
    mh_beta,
    mh_latent_x,
    pooled_draws,
    residual_precision_conditional,
    run_chain,
    run_chains,
    summarize_draws,
    tau_gamma_conditional,
    tau_u_conditional,
    tau_x_conditional,
    x_gaussian_conditional,
)
from engine.model import build_joint_model, build_naive_model, joint_log_density
from engine.priors import PriorSpec


def test_chain_config_defaults():
    cfg = ChainConfig(seed=1)
    assert (cfg.iterations, cfg.burn_in, cfg.thin) == (100_000, 10_000, 10)
    assert cfg.n_draws == 9000
    assert cfg.proposal_scales == {"x": 0.1, "beta": 0.1, "gamma": 0.1}
    assert ChainConfig(seed=1, proposal_scales={"x": 0.5}).proposal_scales["beta"] == 0.1


@pytest.mark.parametrize("fields", [
    {},
    {"seed": -1},
    {"seed": 1, "iterations": 100, "burn_in": 100},
    {"seed": 1, "iterations": 100, "burn_in": 90, "thin": 20},
    {"seed": 1, "proposal_scales": {"x": -0.1}},
    {"seed": 1, "proposal_scales": {"tau": 0.1}},
    {"seed": 1, "thin": 0},
])
def test_chain_config_rejects(fields):
    with pytest.raises(ValidationError):
        ChainConfig(**fields)


def test_precision_conditionals():
    prior = PriorSpec.gamma(2.0, 2.0)
    assert tau_x_conditional(np.array([1.0, 3.0]), np.zeros(2), prior) == (3.0, 7.0)
    assert tau_gamma_conditional(np.array([1.0, -1.0, 2.0]), prior) == (3.5, 5.0)

    y = np.array([0.5, 1.5, 2.0])
    assert residual_precision_conditional(y, y, np.ones(3, dtype=bool), prior) == (3.5, 2.0)
    observed = np.array([True, False, True])
    params = residual_precision_conditional(y, np.zeros(3), observed, prior)
    assert params == (3.0, pytest.approx(2.0 + 0.5 * (0.25 + 4.0)))


def test_replicate_precision_skips_absent_values():
    w = np.array([[1.0, np.nan], [2.0, 4.0]])
    params = tau_u_conditional(w, np.array([1.0, 3.0]), np.array([1.0, 2.0]), PriorSpec.gamma(1.0, 1.0))
    # present residuals 0, 1 (weight 1) and 1 (weight 2)
    assert params == (2.5, 2.5)


def test_exposure_coefficients_conditional(rng):
    D = np.column_stack([np.ones(40), rng.standard_normal(40)])
    x = D @ np.array([0.5, -1.0]) + 0.1 * rng.standard_normal(40)
    mean, precision = alpha_conditional(x, D, np.zeros(40), 100.0, np.zeros(2), np.zeros(2))
    np.testing.assert_allclose(mean, np.linalg.lstsq(D, x, rcond=None)[0], atol=1e-10)
    np.testing.assert_allclose(precision, 100.0 * D.T @ D)

    prior_mean, prior_precision = np.array([1.0, 2.0]), np.array([3.0, 4.0])
    mean, precision = alpha_conditional(x, D, np.ones(40), 2.0, prior_mean, prior_precision)
    expected = np.linalg.solve(2.0 * D.T @ D + np.diag(prior_precision),
                               2.0 * D.T @ (x - 1.0) + prior_precision * prior_mean)
    np.testing.assert_allclose(mean, expected, atol=1e-10)


def test_singular_exposure_design_raises():
    D = np.ones((3, 2))
    with pytest.raises(NotPositiveDefiniteError):
        alpha_conditional(np.zeros(3), D, np.zeros(3), 1.0, np.zeros(2), np.zeros(2))


def test_gaussian_x_conditional_matches_the_target(ibex_model, rng):
    data = SamplerData.from_model(ibex_model)
    base = ChainState.initial(data)
    for _ in range(50):
        state = ChainState(
            beta=rng.standard_normal(len(data.beta_names)),
            beta_x=float(rng.normal(-1.5, 1.0)),
            alpha=base.alpha.copy(),
            x=base.x + 0.1 * rng.standard_normal(data.m),
            gamma=base.gamma.copy(),
            tau={**base.tau, "tau_u": rng.gamma(5.0), "tau_x": rng.gamma(50.0), "tau_eps": rng.gamma(100.0)},
        )
        mean, precision = x_gaussian_conditional(state, data)
        eta_without_x = state.linear_predictor(data) - state.beta_x * state.x[data.group]
        a, b = state.x, state.x + rng.standard_normal(data.m)
        gap = _x_log_target(b, state, data, eta_without_x) - _x_log_target(a, state, data, eta_without_x)
        expected = -0.5 * precision * ((b - mean) ** 2 - (a - mean) ** 2)
        np.testing.assert_allclose(gap, expected, rtol=1e-8, atol=1e-8)


def test_zero_proposal_scale_keeps_x(framingham_model):
    cfg = ChainConfig(iterations=300, burn_in=100, thin=1, seed=3, proposal_scales={"x": 0.0})
    out = run_chain(framingham_model, cfg)
    assert out.acceptance_rates["x"] == 1.0
    for i in range(4):
        assert np.ptp(out.column(f"x[{i}]")) == 0.0


def test_monitored_names(framingham_model):
    cfg = ChainConfig(iterations=50, burn_in=10, thin=1, seed=1, monitor_x=(0, 2))
    out = run_chain(framingham_model, cfg)
    assert out.names == ("beta_0", "beta_z", "alpha_0", "alpha_z", "beta_x", "tau_u", "tau_x", "x[0]", "x[2]")
    assert out.draws.shape == (40, 9)
    assert set(out.acceptance_rates) == {"x", "beta"}
    assert all(0.0 <= rate <= 1.0 for rate in out.acceptance_rates.values())
    assert np.all(out.column("tau_u") > 0)


def test_seeded_chains_are_reproducible(ibex_model):
    cfg = ChainConfig(iterations=2000, burn_in=500, thin=5, seed=7)
    first = run_chain(ibex_model, cfg)
    second = run_chain(ibex_model, cfg)
    assert first.draws.shape[0] == 300
    np.testing.assert_array_equal(first.draws, second.draws)
    assert first.acceptance_rates == {}
    other = run_chain(ibex_model, cfg.model_copy(update={"seed": 8}))
    assert not np.array_equal(first.draws, other.draws)


def test_poisson_chain_with_random_effects(seedling_model):
    cfg = ChainConfig(iterations=400, burn_in=100, thin=2, seed=5)
    out = run_chain(seedling_model, cfg)
    assert set(out.acceptance_rates) == {"x", "beta", "gamma"}
    assert "tau_gamma" in out.names
    assert np.all(np.isfinite(out.draws))


def test_naive_model_is_not_sampled(framingham_spec, framingham_data):
    with pytest.raises(UnsupportedModelError):
        run_chain(build_naive_model(framingham_spec, framingham_data), ChainConfig(seed=1))


def test_independent_chains(ibex_model):
    cfg = ChainConfig(iterations=600, burn_in=100, thin=5, seed=11, chains=2)
    outputs = run_chains(ibex_model, cfg, workers=2)
    assert [o.chain for o in outputs] == [0, 1]
    assert not np.array_equal(outputs[0].draws, outputs[1].draws)
    pooled = pooled_draws(outputs)
    assert len(pooled) == 2 * cfg.n_draws
    again = run_chains(ibex_model, cfg, workers=1)
    np.testing.assert_array_equal(outputs[1].draws, again[1].draws)


def test_effective_sample_size_of_independent_draws(rng):
    draws = rng.standard_normal((20_000, 2))
    ess = effective_sample_size(draws)
    assert np.all(ess > 0.8 * 20_000)
    assert np.all(ess < 1.2 * 20_000)


def test_effective_sample_size_of_autoregressive_draws(rng):
    phi, n = 0.9, 50_000
    noise = rng.standard_normal(n)
    chain = np.empty(n)
    chain[0] = noise[0]
    for t in range(1, n):
        chain[t] = phi * chain[t - 1] + noise[t]
    expected = n * (1 - phi) / (1 + phi)
    assert effective_sample_size(chain)[0] == pytest.approx(expected, rel=0.3)


def test_summaries_of_draws(rng):
    frame = pd.DataFrame({"a": rng.normal(2.0, 0.5, 40_000)})
    summary = summarize_draws(frame)["a"]
    assert summary.mean == pytest.approx(2.0, abs=0.02)
    assert summary.sd == pytest.approx(0.5, rel=0.03)
    assert summary.q975 == pytest.approx(stats.norm.ppf(0.975, 2.0, 0.5), abs=0.03)


@pytest.mark.slow
def test_adaptation_settles_near_the_target(framingham_model):
    cfg = ChainConfig(iterations=6000, burn_in=2000, thin=5, seed=21)
    out = run_chain(framingham_model, cfg)
    assert 0.2 <= out.acceptance_rates["x"] <= 0.5
    assert 0.15 <= out.acceptance_rates["beta"] <= 0.6


def _agree(draws, marginal, sd_tol, mean_tol=0.2):
    mean, sd = draws.mean(), draws.std(ddof=1)
    assert abs(mean - marginal.mean) < mean_tol * marginal.sd
    assert sd == pytest.approx(marginal.sd, rel=sd_tol)


@pytest.mark.slow
def test_gaussian_chain_agrees_with_the_laplace_fit(ibex_model):
    out = run_chain(ibex_model, ChainConfig(iterations=40_000, burn_in=4000, thin=4, seed=31))
    grid = explore_grid(ibex_model, dz=1.0, diff_logdens=8.0)
    for name in ("beta_0", "beta_z1"):
        _agree(out.column(name), latent_marginal(ibex_model, grid, name), 0.15)
    _agree(out.column("beta_x"), hyper_marginal(grid, "beta_x"), 0.15)



@pytest.mark.slow
def test_logistic_chain_agrees_with_the_laplace_fit(framingham_spec):
    frame, _ = study_frame("framingham", seed=17, n=200)
    model = build_joint_model(framingham_spec, Dataset.from_frame(frame, framingham_spec))
    out = run_chain(model, ChainConfig(seed=41))
    grid = explore_grid(model, dz=0.5, diff_logdens=10.0)
    for name in ("beta_0", "beta_z", "alpha_0", "alpha_z", "x[0]"):
        _agree(out.column(name), latent_marginal(model, grid, name), 0.1, mean_tol=0.1)
    for name in ("beta_x", "tau_u", "tau_x"):
        _agree(out.column(name), hyper_marginal(grid, name), 0.1, mean_tol=0.1)


def _latent_vector(model, state):
    latent = model.latent
    v = np.zeros(model.latent_size)
    v[np.r_[latent.slice("beta_0"), latent.slice("beta_z")]] = state.beta
    v[np.r_[latent.slice("alpha_0"), latent.slice("alpha_z")]] = state.alpha
    v[latent.slice("x")] = state.x
    v[latent.slice("x_star")] = state.beta_x * state.x
    return v


def _random_state(data, rng):
    base = ChainState.initial(data)
    return ChainState(
        beta=rng.normal(0.0, 1.0, len(data.beta_names)),
        beta_x=float(rng.normal(1.0, 0.5)),
        alpha=rng.normal(0.0, 0.5, len(data.alpha_names)),
        x=base.x + 0.1 * rng.standard_normal(data.m),
        gamma=base.gamma.copy(),
        tau={"tau_u": float(rng.gamma(100.0, 0.01)), "tau_x": float(rng.gamma(10.0, 0.1))},
    )


def test_conjugate_conditionals_match_the_joint_density(framingham_model, rng):
    data = SamplerData.from_model(framingham_model)
    layout = framingham_model.theta_layout
    alpha_index = np.r_[framingham_model.latent.slice("alpha_0"), framingham_model.latent.slice("alpha_z")]
    for _ in range(50):
        state = _random_state(data, rng)
        v = _latent_vector(framingham_model, state)

        def joint(latent=v, **tau):
            theta = layout.make(beta_x=state.beta_x, **{**state.tau, **tau})
            return joint_log_density(framingham_model, latent, theta)

        conditionals = {
            "tau_x": tau_x_conditional(state.x, state.exposure_mean(data), data.priors["tau_x"]),
            "tau_u": tau_u_conditional(data.w, state.x, data.d, data.priors["tau_u"]),
        }
        for name, params in conditionals.items():
            law = stats.gamma(params.shape, scale=1.0 / params.rate)
            a, b = state.tau[name] * rng.uniform(0.5, 2.0, size=2)
            assert joint(**{name: a}) - joint(**{name: b}) == pytest.approx(law.logpdf(a) - law.logpdf(b), abs=1e-6)

        mean, precision = alpha_conditional(state.x, data.exposure_design, data.exposure_offset, state.tau["tau_x"],
                                            data.alpha_mean, data.alpha_precision)
        other = v.copy()
        other[alpha_index] = state.alpha + rng.standard_normal(len(state.alpha))

        def quadratic(alpha):
            return -0.5 * (alpha - mean) @ precision @ (alpha - mean)

        expected = quadratic(other[alpha_index]) - quadratic(state.alpha)
        assert joint(latent=other) - joint() == pytest.approx(expected, abs=1e-6)


def test_exposure_precision_draws_follow_their_gamma(framingham_model, rng):
    data = SamplerData.from_model(framingham_model)
    state = _random_state(data, rng)
    params = tau_x_conditional(state.x, state.exposure_mean(data), data.priors["tau_x"])
    assert params.shape == data.priors["tau_x"].shape + data.m / 2
    draws = np.empty(20_000)
    for t in range(len(draws)):
        gibbs_tau_x(state, data, rng)
        draws[t] = state.tau["tau_x"]
    assert draws.mean() == pytest.approx(params.shape / params.rate, rel=0.01)
    assert draws.var() == pytest.approx(params.shape / params.rate ** 2, rel=0.05)


def test_exposure_coefficients_revert_to_the_prior_without_exposure_precision(framingham_model, rng):
    data = SamplerData.from_model(framingham_model)
    state = _random_state(data, rng)
    state.tau["tau_x"] = 1e-12
    mean, precision = alpha_conditional(state.x, data.exposure_design, data.exposure_offset, state.tau["tau_x"],
                                        data.alpha_mean, data.alpha_precision)
    np.testing.assert_allclose(mean, data.alpha_mean, atol=1e-9)
    np.testing.assert_allclose(precision, np.diag(data.alpha_precision), atol=1e-9)
    draws = np.empty((20_000, len(data.alpha_names)))
    for t in range(len(draws)):
        gibbs_alpha(state, data, rng)
        draws[t] = state.alpha
    np.testing.assert_allclose(draws.mean(axis=0), data.alpha_mean, atol=0.05)
    np.testing.assert_allclose(draws.std(axis=0), 1.0 / np.sqrt(data.alpha_precision), rtol=0.03)


@pytest.mark.slow
def test_regression_coefficients_without_data_sample_the_prior(framingham_model, rng):
    data = replace(SamplerData.from_model(framingham_model), observed=np.zeros(framingham_model.data.n, dtype=bool))
    state = ChainState.initial(data)
    factor = beta_proposal_factor(state, data)
    np.testing.assert_allclose(factor, 10.0 * np.eye(3), rtol=1e-10)
    draws = np.empty((40_000, 3))
    for t in range(len(draws)):
        mh_beta(state, data, 1.0, factor, rng)
        draws[t] = [*state.beta, state.beta_x]
    kept = draws[2000::10]
    np.testing.assert_allclose(kept.mean(axis=0), 0.0, atol=1.0)
    np.testing.assert_allclose(kept.std(axis=0), 10.0, rtol=0.1)


@pytest.mark.slow
def test_latent_exposure_updates_leave_their_target_invariant(framingham_model, rng):
    data = SamplerData.from_model(framingham_model)
    state = ChainState.initial(data)
    state.beta = np.array([-0.5, 0.3])
    state.beta_x = 1.0
    eta_without_x = state.linear_predictor(data) - state.beta_x * state.x[data.group]
    values = np.linspace(state.x[0] - 1.0, state.x[0] + 1.0, 4001)
    log_target = np.array([_x_log_target(np.full(data.m, g), state, data, eta_without_x)[0] for g in values])
    density = np.exp(log_target - log_target.max())
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(values))])
    cdf /= cdf[-1]
    edges = np.interp(np.linspace(0.1, 0.9, 9), cdf, values)

    kept = []
    for t in range(60_000):
        mh_latent_x(state, data, 0.1, rng)
        if t >= 1000 and t % 20 == 0:
            kept.append(state.x[0])
    counts = np.bincount(np.searchsorted(edges, kept), minlength=10)
    assert stats.chisquare(counts).pvalue > 1e-3
