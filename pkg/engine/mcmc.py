"""Metropolis-within-Gibbs sampler for the measurement error models.

Conjugate blocks (precisions, exposure coefficients and, for Gaussian
likelihoods, x, beta and gamma) are drawn exactly; the remaining blocks use
random-walk Metropolis with Robbins-Monro scale adaptation during burn-in.
The sampler works on the uncopied model: the regression reads beta_x * x.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import linalg

from engine.elicit import GammaParameters
from engine.errors import NotPositiveDefiniteError, UnsupportedModelError
from engine.model import JointModel
from engine.priors import PriorSpec

logger = logging.getLogger(__name__)

TARGET_ACCEPTANCE = 0.35
ADAPTATION_DECAY = 0.6
MH_BLOCKS = ("x", "beta", "gamma")


class ChainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    iterations: int = Field(default=100_000, gt=0)
    burn_in: int = Field(default=10_000, ge=0)
    thin: int = Field(default=10, ge=1)
    seed: int = Field(ge=0, lt=2 ** 64)
    proposal_scales: dict[str, float] = Field(default_factory=lambda: {block: 0.1 for block in MH_BLOCKS})
    adapt: bool = True
    monitor_x: tuple[int, ...] = (0, 1, 2, 3)
    store_x: bool = False
    chains: int = Field(default=1, ge=1)

    @field_validator("proposal_scales")
    @classmethod
    def _check_scales(cls, scales: dict[str, float]) -> dict[str, float]:
        unknown = set(scales) - set(MH_BLOCKS)
        if unknown:
            raise ValueError(f"unknown proposal blocks {sorted(unknown)}; expected {MH_BLOCKS}")
        if any(not (s >= 0 and math.isfinite(s)) for s in scales.values()):
            raise ValueError("proposal scales must be finite and >= 0")
        return {**{block: 0.1 for block in MH_BLOCKS}, **scales}

    @model_validator(mode="after")
    def _check_lengths(self):
        if self.burn_in >= self.iterations:
            raise ValueError(f"burn_in ({self.burn_in}) must be below iterations ({self.iterations})")
        if self.n_draws < 1:
            raise ValueError("no draws would be kept; lower thin or burn_in")
        return self

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass(frozen=True)
class ChainOutput:
    names: tuple[str, ...]
    draws: np.ndarray
    acceptance_rates: dict[str, float]
    chain: int = 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.draws, columns=list(self.names))

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]


@dataclass(frozen=True)
class SamplerData:
    """The model's equations in the form the conditionals need."""

    family: str
    error_kind: str
    y: np.ndarray
    trials: np.ndarray
    observed: np.ndarray
    group: np.ndarray
    fixed_design: np.ndarray
    beta_names: tuple[str, ...]
    beta_mean: np.ndarray
    beta_precision: np.ndarray
    w: np.ndarray
    d: np.ndarray
    exposure_design: np.ndarray
    exposure_offset: np.ndarray
    alpha_names: tuple[str, ...]
    alpha_mean: np.ndarray
    alpha_precision: np.ndarray
    x_base_precision: np.ndarray
    has_gamma: bool
    priors: dict[str, PriorSpec]

    @property
    def m(self) -> int:
        return self.w.shape[1]

    @property
    def n(self) -> int:
        return len(self.y)

    def is_free(self, name: str) -> bool:
        return name in self.priors and not self.priors[name].is_fixed

    @classmethod
    def from_model(cls, model: JointModel) -> "SamplerData":
        if model.error_kind is None:
            raise UnsupportedModelError("the sampler needs a measurement error model, got a naive model")
        if model.x_conditional is not None:
            raise UnsupportedModelError("the sampler works on the stacked (copy) formulation")
        latent = model.latent
        regression = model.block("regression")
        beta_cols = np.r_[latent.slice("beta_0"), latent.slice("beta_z")].astype(int)
        exposure = model.block("exposure")
        alpha_cols = np.r_[latent.slice("alpha_0"), latent.slice("alpha_z")].astype(int)
        if exposure is not None:
            exposure_design = exposure.design[:, alpha_cols].toarray()
            exposure_offset = np.asarray(exposure.offset)
        else:
            exposure_design = np.zeros((model.data.n_latent, 0))
            exposure_offset = np.zeros(model.data.n_latent)
        layout = model.theta_layout
        data = model.data
        y = np.asarray(data.y, dtype=float)
        return cls(
            family=model.family,
            error_kind=model.error_kind,
            y=np.where(np.isnan(y), 0.0, y),
            trials=np.asarray(data.trials, dtype=float),
            observed=~np.isnan(y),
            group=np.asarray(data.group),
            fixed_design=regression.design[:, beta_cols].toarray(),
            beta_names=tuple(latent.names[i] for i in beta_cols),
            beta_mean=model.prior_mean[beta_cols],
            beta_precision=model.prior_precision[beta_cols],
            w=np.asarray(data.w, dtype=float),
            d=np.asarray(data.weights, dtype=float),
            exposure_design=exposure_design,
            exposure_offset=exposure_offset,
            alpha_names=tuple(latent.names[i] for i in alpha_cols),
            alpha_mean=model.prior_mean[alpha_cols],
            alpha_precision=model.prior_precision[alpha_cols],
            x_base_precision=model.prior_precision[latent.slice("x")],
            has_gamma=latent.has("gamma"),
            priors=dict(zip(layout.names, layout.priors)),
        )


@dataclass
class ChainState:
    beta: np.ndarray
    beta_x: float
    alpha: np.ndarray
    x: np.ndarray
    gamma: np.ndarray
    tau: dict[str, float]

    @classmethod
    def initial(cls, data: SamplerData) -> "ChainState":
        """x at the proxy means, coefficients at zero, precisions at their prior means."""
        observed = ~np.isnan(data.w)
        counts = observed.sum(axis=0)
        totals = np.where(observed, data.w, 0.0).sum(axis=0)
        overall = totals.sum() / max(counts.sum(), 1)
        x = np.where(counts > 0, totals / np.maximum(counts, 1), overall)
        beta_x_prior = data.priors["beta_x"]
        return cls(
            beta=np.zeros(len(data.beta_names)),
            beta_x=beta_x_prior.value if beta_x_prior.is_fixed else 0.0,
            alpha=np.zeros(len(data.alpha_names)),
            x=x,
            gamma=np.zeros(data.n if data.has_gamma else 0),
            tau={name: prior.center() for name, prior in data.priors.items() if name != "beta_x"},
        )

    def linear_predictor(self, data: SamplerData) -> np.ndarray:
        eta = data.fixed_design @ self.beta + self.beta_x * self.x[data.group]
        if data.has_gamma:
            eta = eta + self.gamma
        return eta

    def exposure_mean(self, data: SamplerData) -> np.ndarray:
        return data.exposure_design @ self.alpha + data.exposure_offset


# Conjugate conditionals


def _gamma_update(prior: PriorSpec, count: float, sum_of_squares: float) -> GammaParameters:
    return GammaParameters(prior.shape + 0.5 * count, prior.rate + 0.5 * sum_of_squares)


def tau_x_conditional(x: np.ndarray, exposure_mean: np.ndarray, prior: PriorSpec) -> GammaParameters:
    r = np.asarray(x) - np.asarray(exposure_mean)
    return _gamma_update(prior, len(r), float(r @ r))


def tau_u_conditional(w: np.ndarray, x: np.ndarray, d: np.ndarray, prior: PriorSpec) -> GammaParameters:
    """Replicates are rows of w; absent replicates do not count."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    r = w - np.asarray(x)[None, :]
    present = ~np.isnan(r)
    weighted = np.where(present, np.asarray(d)[None, :] * np.where(present, r, 0.0) ** 2, 0.0)
    return _gamma_update(prior, int(present.sum()), float(weighted.sum()))


def alpha_conditional(x: np.ndarray, exposure_design: np.ndarray, exposure_offset: np.ndarray, tau_x: float,
                      prior_mean: np.ndarray, prior_precision: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and precision matrix of the exposure coefficients given x and tau_x."""
    D = np.asarray(exposure_design)
    precision = tau_x * D.T @ D + np.diag(prior_precision)
    rhs = tau_x * D.T @ (np.asarray(x) - exposure_offset) + prior_precision * prior_mean
    try:
        chol = linalg.cholesky(precision, lower=True)
    except linalg.LinAlgError as e:
        raise NotPositiveDefiniteError("exposure coefficient conditional precision is singular") from e
    return linalg.cho_solve((chol, True), rhs), precision


def residual_precision_conditional(y: np.ndarray, eta: np.ndarray, observed: np.ndarray,
                                   prior: PriorSpec) -> GammaParameters:
    r = np.where(observed, y - eta, 0.0)
    return _gamma_update(prior, int(observed.sum()), float(r @ r))


def tau_gamma_conditional(gamma: np.ndarray, prior: PriorSpec) -> GammaParameters:
    return _gamma_update(prior, len(gamma), float(gamma @ gamma))


def x_gaussian_conditional(state: ChainState, data: SamplerData) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise mean and precision of x given the rest, for a Gaussian likelihood."""
    precision, rhs = _x_prior_quadratic(state, data)
    tau_eps = state.tau["tau_eps"]
    eta_without_x = state.linear_predictor(data) - state.beta_x * state.x[data.group]
    counts = np.bincount(data.group, weights=data.observed.astype(float), minlength=data.m)
    sums = np.bincount(data.group, weights=np.where(data.observed, data.y - eta_without_x, 0.0), minlength=data.m)
    precision = precision + tau_eps * state.beta_x ** 2 * counts
    rhs = rhs + tau_eps * state.beta_x * sums
    return rhs / precision, precision


def _x_prior_quadratic(state: ChainState, data: SamplerData) -> tuple[np.ndarray, np.ndarray]:
    """Precision and linear term of the x terms from the exposure, proxy and base priors."""
    present = ~np.isnan(data.w)
    precision = data.x_base_precision + state.tau["tau_u"] * data.d * present.sum(axis=0)
    rhs = state.tau["tau_u"] * data.d * np.where(present, data.w, 0.0).sum(axis=0)
    if data.error_kind == "classical":
        precision = precision + state.tau["tau_x"]
        rhs = rhs + state.tau["tau_x"] * state.exposure_mean(data)
    return precision, rhs


def _draw_gamma(params: GammaParameters, rng: np.random.Generator) -> float:
    return float(rng.gamma(params.shape, 1.0 / params.rate))


# Gibbs updates


def gibbs_tau_x(state: ChainState, data: SamplerData, rng: np.random.Generator) -> None:
    if data.is_free("tau_x"):
        params = tau_x_conditional(state.x, state.exposure_mean(data), data.priors["tau_x"])
        state.tau["tau_x"] = _draw_gamma(params, rng)


def gibbs_tau_u(state: ChainState, data: SamplerData, rng: np.random.Generator) -> None:
    if data.is_free("tau_u"):
        state.tau["tau_u"] = _draw_gamma(tau_u_conditional(data.w, state.x, data.d, data.priors["tau_u"]), rng)


def gibbs_alpha(state: ChainState, data: SamplerData, rng: np.random.Generator) -> None:
    if not data.alpha_names:
        return
    mean, precision = alpha_conditional(state.x, data.exposure_design, data.exposure_offset, state.tau["tau_x"],
                                        data.alpha_mean, data.alpha_precision)
    chol = linalg.cholesky(precision, lower=True)
    state.alpha = mean + linalg.solve_triangular(chol.T, rng.standard_normal(len(mean)), lower=False)


def gibbs_tau_eps(state: ChainState, data: SamplerData, rng: np.random.Generator) -> None:
    if data.is_free("tau_eps"):
        params = residual_precision_conditional(data.y, state.linear_predictor(data), data.observed,
                                                data.priors["tau_eps"])
        state.tau["tau_eps"] = _draw_gamma(params, rng)


def gibbs_tau_gamma(state: ChainState, data: SamplerData, rng: np.random.Generator) -> None:
    if data.has_gamma and data.is_free("tau_gamma"):
        state.tau["tau_gamma"] = _draw_gamma(tau_gamma_conditional(state.gamma, data.priors["tau_gamma"]), rng)


# Metropolis updates


def _row_log_likelihood(eta: np.ndarray, data: SamplerData, state: ChainState) -> np.ndarray:
    if data.family == "gaussian":
        terms = -0.5 * state.tau["tau_eps"] * (data.y - eta) ** 2
    elif data.family == "binomial":
        terms = data.y * eta - data.trials * np.logaddexp(0.0, eta)
    else:
        with np.errstate(over="ignore"):
            terms = data.y * eta - np.exp(eta)
    return np.where(data.observed, terms, 0.0)


def _x_log_target(x: np.ndarray, state: ChainState, data: SamplerData, eta_without_x: np.ndarray) -> np.ndarray:
    """Unnormalized log conditional of each x element; elements are conditionally independent."""
    precision, rhs = _x_prior_quadratic(state, data)
    prior = -0.5 * precision * x ** 2 + rhs * x
    rows = _row_log_likelihood(eta_without_x + state.beta_x * x[data.group], data, state)
    return prior + np.bincount(data.group, weights=rows, minlength=data.m)


def mh_latent_x(state: ChainState, data: SamplerData, scale: float, rng: np.random.Generator) -> float:
    """Update x; returns the acceptance fraction (1 for exact Gaussian draws)."""
    if data.family == "gaussian":
        mean, precision = x_gaussian_conditional(state, data)
        state.x = mean + rng.standard_normal(data.m) / np.sqrt(precision)
        return 1.0
    eta_without_x = state.linear_predictor(data) - state.beta_x * state.x[data.group]
    proposal = state.x + scale * rng.standard_normal(data.m)
    log_ratio = (_x_log_target(proposal, state, data, eta_without_x)
                 - _x_log_target(state.x, state, data, eta_without_x))
    accept = np.log(rng.uniform(size=data.m)) < log_ratio
    state.x = np.where(accept, proposal, state.x)
    return float(accept.mean())


def _beta_design(state: ChainState, data: SamplerData) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Design, prior mean and prior precision of the regression coefficients being sampled."""
    if not data.is_free("beta_x"):
        return data.fixed_design, data.beta_mean, data.beta_precision
    prior = data.priors["beta_x"]
    design = np.column_stack([data.fixed_design, state.x[data.group]])
    return design, np.append(data.beta_mean, prior.mean), np.append(data.beta_precision, prior.precision)


def _beta_vector(state: ChainState, data: SamplerData) -> np.ndarray:
    return np.append(state.beta, state.beta_x) if data.is_free("beta_x") else state.beta.copy()


def _set_beta(state: ChainState, data: SamplerData, values: np.ndarray) -> None:
    k = len(data.beta_names)
    state.beta = values[:k].copy()
    if data.is_free("beta_x"):
        state.beta_x = float(values[k])


def _beta_offset(state: ChainState, data: SamplerData) -> np.ndarray:
    offset = state.gamma.copy() if data.has_gamma else np.zeros(data.n)
    if not data.is_free("beta_x"):
        offset = offset + state.beta_x * state.x[data.group]
    return offset


def gibbs_beta(state: ChainState, data: SamplerData, rng: np.random.Generator) -> None:
    design, mean, prior_precision = _beta_design(state, data)
    tau_eps = state.tau["tau_eps"]
    rows = design[data.observed]
    residual = (data.y - _beta_offset(state, data))[data.observed]
    precision = tau_eps * rows.T @ rows + np.diag(prior_precision)
    rhs = tau_eps * rows.T @ residual + prior_precision * mean
    try:
        chol = linalg.cholesky(precision, lower=True)
    except linalg.LinAlgError as e:
        raise NotPositiveDefiniteError("regression coefficient conditional precision is singular") from e
    centre = linalg.cho_solve((chol, True), rhs)
    _set_beta(state, data, centre + linalg.solve_triangular(chol.T, rng.standard_normal(len(centre)), lower=False))


def _beta_log_target(values: np.ndarray, state: ChainState, data: SamplerData) -> float:
    design, mean, precision = _beta_design(state, data)
    eta = design @ values + _beta_offset(state, data)
    prior = -0.5 * float(np.sum(precision * (values - mean) ** 2))
    return float(np.sum(_row_log_likelihood(eta, data, state))) + prior


def beta_proposal_factor(state: ChainState, data: SamplerData) -> np.ndarray:
    """Cholesky factor of the inverse Fisher information plus prior precision at the current state."""
    design, _, precision = _beta_design(state, data)
    eta = design @ _beta_vector(state, data) + _beta_offset(state, data)
    if data.family == "binomial":
        pi = 0.5 * (1.0 + np.tanh(0.5 * eta))
        weight = data.trials * pi * (1.0 - pi)
    else:
        weight = np.exp(np.clip(eta, -30.0, 30.0))
    weight = np.where(data.observed, weight, 0.0)
    information = design.T @ (design * weight[:, None]) + np.diag(precision)
    try:
        return linalg.cholesky(linalg.inv(information), lower=True)
    except (linalg.LinAlgError, ValueError):
        logger.warning("[MCMC] beta information matrix is singular; using an identity proposal")
        return np.eye(design.shape[1])


def mh_beta(state: ChainState, data: SamplerData, scale: float, factor: np.ndarray,
            rng: np.random.Generator) -> float:
    """Joint random-walk update of the regression coefficients; returns 1.0 if accepted."""
    if data.family == "gaussian":
        gibbs_beta(state, data, rng)
        return 1.0
    current = _beta_vector(state, data)
    proposal = current + scale * (factor @ rng.standard_normal(len(current)))
    log_ratio = _beta_log_target(proposal, state, data) - _beta_log_target(current, state, data)
    if math.log(rng.uniform()) < log_ratio:
        _set_beta(state, data, proposal)
        return 1.0
    return 0.0


def update_gamma(state: ChainState, data: SamplerData, scale: float, rng: np.random.Generator) -> float:
    if not data.has_gamma:
        return 1.0
    tau_gamma = state.tau["tau_gamma"]
    eta_without = state.linear_predictor(data) - state.gamma
    if data.family == "gaussian":
        tau_eps = state.tau["tau_eps"]
        precision = tau_gamma + tau_eps * data.observed
        mean = tau_eps * np.where(data.observed, data.y - eta_without, 0.0) / precision
        state.gamma = mean + rng.standard_normal(data.n) / np.sqrt(precision)
        return 1.0

    def target(gamma: np.ndarray) -> np.ndarray:
        return _row_log_likelihood(eta_without + gamma, data, state) - 0.5 * tau_gamma * gamma ** 2

    proposal = state.gamma + scale * rng.standard_normal(data.n)
    accept = np.log(rng.uniform(size=data.n)) < target(proposal) - target(state.gamma)
    state.gamma = np.where(accept, proposal, state.gamma)
    return float(accept.mean())


# Driver


def _monitored(data: SamplerData, cfg: ChainConfig) -> tuple[tuple[str, ...], list[int]]:
    x_index = list(range(data.m)) if cfg.store_x else [i for i in cfg.monitor_x if 0 <= i < data.m]
    theta = [name for name in data.priors if data.is_free(name)]
    names = (*data.beta_names, *data.alpha_names, *theta, *(f"x[{i}]" for i in x_index))
    return names, x_index


def _record(state: ChainState, data: SamplerData, x_index: list[int]) -> np.ndarray:
    theta = [state.beta_x if name == "beta_x" else state.tau[name] for name in data.priors if data.is_free(name)]
    return np.concatenate([state.beta, state.alpha, theta, state.x[x_index]])


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    sequence = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(sequence))


def run_chain(model: JointModel, cfg: ChainConfig, seed: int | np.random.SeedSequence | None = None,
              chain: int = 0) -> ChainOutput:
    """One chain; identical seed and config give identical draws."""
    data = SamplerData.from_model(model)
    rng = make_rng(cfg.seed if seed is None else seed)
    state = ChainState.initial(data)
    names, x_index = _monitored(data, cfg)
    factor = beta_proposal_factor(state, data) if data.family != "gaussian" else None
    log_scales = {block: math.log(s) if s > 0 else -math.inf for block, s in cfg.proposal_scales.items()}
    accepted = {block: 0.0 for block in MH_BLOCKS}
    draws = np.empty((cfg.n_draws, len(names)))

    kept = 0
    for t in range(cfg.iterations):
        gibbs_tau_x(state, data, rng)
        gibbs_tau_u(state, data, rng)
        gibbs_alpha(state, data, rng)
        rates = {
            "x": mh_latent_x(state, data, math.exp(log_scales["x"]), rng),
            "beta": mh_beta(state, data, math.exp(log_scales["beta"]), factor, rng),
            "gamma": update_gamma(state, data, math.exp(log_scales["gamma"]), rng),
        }
        gibbs_tau_eps(state, data, rng)
        gibbs_tau_gamma(state, data, rng)

        if t < cfg.burn_in:
            if cfg.adapt:
                step = (t + 1) ** -ADAPTATION_DECAY
                for block, rate in rates.items():
                    log_scales[block] += step * (rate - TARGET_ACCEPTANCE)
            continue
        for block, rate in rates.items():
            accepted[block] += rate
        if (t - cfg.burn_in + 1) % cfg.thin == 0 and kept < cfg.n_draws:
            draws[kept] = _record(state, data, x_index)
            kept += 1

    post = cfg.iterations - cfg.burn_in
    acceptance = {block: accepted[block] / post for block in _mh_blocks(data)}
    logger.info("[MCMC] chain %d: %d draws, acceptance %s", chain, kept,
                {block: round(rate, 3) for block, rate in acceptance.items()})
    return ChainOutput(names, draws, acceptance, chain)


def _mh_blocks(data: SamplerData) -> tuple[str, ...]:
    if data.family == "gaussian":
        return ()
    return ("x", "beta", "gamma") if data.has_gamma else ("x", "beta")


def run_chains(model: JointModel, cfg: ChainConfig, workers: int = 1) -> list[ChainOutput]:
    """cfg.chains independent chains; streams are spawned from cfg.seed."""
    if cfg.chains == 1:
        return [run_chain(model, cfg)]
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(run_chain, model, cfg, seed, k) for k, seed in enumerate(seeds)]
        return [future.result() for future in futures]


def pooled_draws(outputs: list[ChainOutput]) -> pd.DataFrame:
    return pd.concat([output.to_frame() for output in outputs], ignore_index=True)


def effective_sample_size(draws: np.ndarray) -> np.ndarray:
    """Per-column effective sample size by the initial positive sequence estimator."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    n = draws.shape[0]
    out = np.empty(draws.shape[1])
    for k in range(draws.shape[1]):
        centred = draws[:, k] - draws[:, k].mean()
        spectrum = np.fft.rfft(centred, 2 * n)
        acov = np.fft.irfft(spectrum * np.conj(spectrum))[:n] / n
        if acov[0] <= 0:
            out[k] = float(n)
            continue
        rho = acov / acov[0]
        total = 0.0
        for lag in range(0, n - 1, 2):
            pair = rho[lag] + rho[lag + 1]
            if pair <= 0:
                break
            total += pair
        tau = max(2.0 * total - 1.0, 1.0 / n)
        out[k] = n / tau
    return out


@dataclass(frozen=True)
class DrawSummary:
    mean: float
    sd: float
    q025: float
    q50: float
    q975: float
    ess: float = field(default=float("nan"))


def summarize_draws(frame: pd.DataFrame) -> dict[str, DrawSummary]:
    ess = effective_sample_size(frame.to_numpy())
    out = {}
    for k, name in enumerate(frame.columns):
        values = frame[name].to_numpy()
        q025, q50, q975 = np.quantile(values, [0.025, 0.5, 0.975])
        sd = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        out[name] = DrawSummary(float(values.mean()), sd, float(q025), float(q50), float(q975), float(ess[k]))
    return out
