"""Closed-form error-model laws and the naive GLM fit that ignores measurement error."""

import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import expit, xlogy

from engine.errors import IRLSDivergenceError, InvalidParameterError, RankDeficiencyError

logger = logging.getLogger(__name__)

ETA_LIMIT = 30.0
IRLS_TOL = 1e-10
IRLS_MAX_ITER = 100
MIN_BINOMIAL_VARIANCE = 1e-10


@dataclass(frozen=True)
class GaussianLaw:
    """Independent normals in precision parameterization."""

    mean: np.ndarray
    precision: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return 1.0 / self.precision

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        return 0.5 * np.log(self.precision / (2 * math.pi)) - 0.5 * self.precision * (x - self.mean) ** 2


@dataclass(frozen=True)
class MecConditional:
    mean: np.ndarray
    precision_diag: np.ndarray

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        return GaussianLaw(self.mean, self.precision_diag).logpdf(x)


def _positive(name: str, value) -> np.ndarray:
    array = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(array)) or np.any(array <= 0):
        raise InvalidParameterError(f"{name} must be positive and finite")
    return array


def _nonzero_slope(beta_x: float) -> float:
    if beta_x == 0 or not math.isfinite(beta_x):
        raise InvalidParameterError(f"beta_x must be finite and nonzero, got {beta_x}")
    return float(beta_x)


def mec_conditional(w, alpha_0: float, tau_x: float, tau_u: float, d=1.0) -> MecConditional:
    """x | w, theta under classical error with an intercept-only exposure model."""
    w = np.asarray(w, dtype=float)
    tau_x, tau_u = float(_positive("tau_x", tau_x)), float(_positive("tau_u", tau_u))
    d = np.broadcast_to(_positive("error weights", d), w.shape)
    precision = tau_x + tau_u * d
    mean = (tau_x * alpha_0 + tau_u * d * w) / precision
    return MecConditional(mean, precision)


def mec_marginal_w(alpha_0: float, tau_x: float, tau_u: float, d=1.0) -> GaussianLaw:
    tau_x, tau_u = float(_positive("tau_x", tau_x)), float(_positive("tau_u", tau_u))
    d = np.atleast_1d(_positive("error weights", d))
    precision = 1.0 / (1.0 / (tau_u * d) + 1.0 / tau_x)
    return GaussianLaw(np.full(d.shape, float(alpha_0)), precision)


def mec_scaled_conditional(w, alpha_0: float, tau_x: float, tau_u: float, beta_x: float, d=1.0) -> GaussianLaw:
    """Law of beta_x * x given w under classical error."""
    beta_x = _nonzero_slope(beta_x)
    base = mec_conditional(w, alpha_0, tau_x, tau_u, d)
    return GaussianLaw(beta_x * base.mean, base.precision_diag / beta_x ** 2)


def meb_conditional(w, tau_u: float, beta_x: float, d=1.0) -> GaussianLaw:
    """Law of beta_x * x given w under Berkson error."""
    beta_x = _nonzero_slope(beta_x)
    w = np.asarray(w, dtype=float)
    tau_u = float(_positive("tau_u", tau_u))
    d = np.broadcast_to(_positive("error weights", d), w.shape)
    return GaussianLaw(beta_x * w, tau_u * d / beta_x ** 2)


def attenuation_factor(tau_x: float, tau_u: float) -> float:
    """Expected shrinkage of the naive simple-regression slope under homoscedastic classical error."""
    tau_x, tau_u = float(_positive("tau_x", tau_x)), float(_positive("tau_u", tau_u))
    return tau_u / (tau_u + tau_x)


# Naive fit


@dataclass(frozen=True)
class NaiveFit:
    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    deviance: float
    iterations: int
    family: str

    def estimate(self, name: str) -> tuple[float, float]:
        k = self.names.index(name)
        return float(self.coef[k]), float(self.se[k])


def _deviance(family: str, y: np.ndarray, mu: np.ndarray, trials: np.ndarray) -> float:
    if family == "gaussian":
        return float(np.sum((y - mu) ** 2))
    if family == "binomial":
        return float(2 * np.sum(xlogy(y, y / mu) + xlogy(trials - y, (trials - y) / (trials - mu))))
    return float(2 * np.sum(xlogy(y, y / mu) - (y - mu)))


def _mean_and_variance(family: str, eta: np.ndarray, trials: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if family == "gaussian":
        return eta, np.ones_like(eta)
    if family == "binomial":
        pi = expit(eta)
        return trials * pi, trials * pi * (1.0 - pi)
    mu = np.exp(eta)
    return mu, mu


def naive_glm_fit(y, w, z=None, family: Literal["gaussian", "binomial", "poisson"] = "gaussian",
                  trials=1, names: tuple[str, ...] | None = None) -> NaiveFit:
    """Maximum-likelihood GLM with the proxy w standing in for x, by IRLS.

    w may hold replicates as rows, in which case their mean is used. Rows
    with an absent response or proxy are dropped.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.ndim == 2:
        with np.errstate(invalid="ignore"):
            w = np.nanmean(w, axis=0)
    n = len(y)
    z = np.zeros((n, 0)) if z is None else np.asarray(z, dtype=float).reshape(n, -1)
    trials = np.broadcast_to(np.asarray(trials, dtype=float), (n,))
    names = names or tuple(f"z{j + 1}" for j in range(z.shape[1]))
    coef_names = ("beta_0", "beta_x", *(f"beta_{c}" for c in names))

    keep = ~(np.isnan(y) | np.isnan(w))
    X = np.column_stack([np.ones(n), w, z])[keep]
    y, trials = y[keep], trials[keep]
    p = X.shape[1]
    if X.shape[0] < p or np.linalg.matrix_rank(X) < p:
        raise RankDeficiencyError(f"naive design with columns {coef_names} is rank deficient")

    beta = np.zeros(p)
    eta = X @ beta
    mu, var = _mean_and_variance(family, eta, trials)
    deviance = _deviance(family, y, mu, trials)
    for iteration in range(1, IRLS_MAX_ITER + 1):
        working = eta + (y - mu) / var
        root = np.sqrt(var)
        beta = np.linalg.lstsq(X * root[:, None], working * root, rcond=None)[0]
        eta = X @ beta
        if family != "gaussian":
            if np.any(np.abs(eta) >= ETA_LIMIT):
                raise IRLSDivergenceError(f"{family} IRLS diverged: linear predictor reached {ETA_LIMIT:g}")
            eta = np.clip(eta, -ETA_LIMIT, ETA_LIMIT)
        mu, var = _mean_and_variance(family, eta, trials)
        if family == "binomial" and np.any(var / trials < MIN_BINOMIAL_VARIANCE):
            raise IRLSDivergenceError("fitted probabilities at 0 or 1; the data look separated")
        previous, deviance = deviance, _deviance(family, y, mu, trials)
        if abs(deviance - previous) < IRLS_TOL * (abs(deviance) + 0.1):
            break
    else:
        raise IRLSDivergenceError(f"IRLS did not converge in {IRLS_MAX_ITER} iterations")

    dispersion = deviance / (len(y) - p) if family == "gaussian" and len(y) > p else 1.0
    information = X.T @ (X * var[:, None])
    covariance = dispersion * np.linalg.inv(information)
    logger.debug("[FIT] naive %s IRLS converged in %d iterations, deviance %.6g", family, iteration, deviance)
    return NaiveFit(coef_names, beta, np.sqrt(np.diag(covariance)), deviance, iteration, family)
