"""Prior elicitation: expert intervals and quantiles turned into prior parameters."""

import logging
import math
from typing import NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import optimize, stats
from scipy.special import gammaincinv

from engine.errors import ElicitationError, InvalidParameterError
from engine.priors import PriorSpec

logger = logging.getLogger(__name__)

SHAPE_BRACKET = (1e-3, 1e3)
BISECTION_MAX_ITER = 200


class QuantileTarget(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    p_lo: float = Field(default=0.025, gt=0.0, lt=1.0)
    q_lo: float = Field(gt=0.0)
    p_hi: float = Field(default=0.975, gt=0.0, lt=1.0)
    q_hi: float = Field(gt=0.0)

    @model_validator(mode="after")
    def _check_order(self):
        if not self.p_lo < self.p_hi:
            raise ValueError(f"need p_lo < p_hi, got {self.p_lo} and {self.p_hi}")
        if not self.q_lo < self.q_hi:
            raise ValueError(f"need q_lo < q_hi, got {self.q_lo} and {self.q_hi}")
        return self


class GammaParameters(NamedTuple):
    shape: float
    rate: float

    def as_prior(self) -> PriorSpec:
        return PriorSpec.gamma(self.shape, self.rate)

    def cdf(self, q: float) -> float:
        return float(stats.gamma.cdf(q, self.shape, scale=1.0 / self.rate))


class LogNormalParameters(NamedTuple):
    mu: float
    sigma2: float

    def cdf(self, q: float) -> float:
        return float(stats.lognorm.cdf(q, math.sqrt(self.sigma2), scale=math.exp(self.mu)))


def _quantile_ratio(shape: float, p_lo: float, p_hi: float) -> float:
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = gammaincinv(shape, p_hi) / gammaincinv(shape, p_lo)
    return float(ratio) if np.isfinite(ratio) else math.inf


def gamma_from_quantiles(target: QuantileTarget) -> GammaParameters:
    """Gamma(shape, rate) with F(q_lo) = p_lo and F(q_hi) = p_hi.

    The quantile ratio does not depend on the rate, so the shape is found by
    bisection on the ratio and the rate then follows from the lower quantile.
    """
    ratio = target.q_hi / target.q_lo

    def mismatch(shape: float) -> float:
        return _quantile_ratio(shape, target.p_lo, target.p_hi) - ratio

    lo, hi = SHAPE_BRACKET
    try:
        shape = optimize.bisect(mismatch, lo, hi, maxiter=BISECTION_MAX_ITER)
    except ValueError as e:
        raise ElicitationError(
            f"no gamma shape in [{lo}, {hi}] matches the quantile ratio {ratio:.6g}"
        ) from e
    except RuntimeError as e:
        raise ElicitationError(f"shape bisection did not converge: {e}") from e
    rate = float(gammaincinv(shape, target.p_lo)) / target.q_lo
    logger.info("[ELICIT] gamma from quantiles (%g, %g): shape %.6g, rate %.6g",
                target.q_lo, target.q_hi, shape, rate)
    return GammaParameters(float(shape), rate)


def lognormal_from_quantiles(target: QuantileTarget) -> LogNormalParameters:
    z_lo, z_hi = stats.norm.ppf([target.p_lo, target.p_hi])
    sigma = (math.log(target.q_hi) - math.log(target.q_lo)) / (z_hi - z_lo)
    mu = math.log(target.q_lo) - sigma * z_lo
    return LogNormalParameters(float(mu), float(sigma * sigma))


def precision_from_uniform_range(width: float) -> float:
    """Inverse variance of a uniform distribution of the given width."""
    if not (width > 0 and math.isfinite(width)):
        raise InvalidParameterError(f"range width must be positive, got {width}")
    return 12.0 / width ** 2


def berkson_sigma_from_interval(interval: float, z: float = 1.96) -> float:
    """Error precision when +-interval covers the truth with the normal quantile z."""
    if not (interval > 0 and math.isfinite(interval)):
        raise InvalidParameterError(f"interval half-width must be positive, got {interval}")
    if not (z > 0 and math.isfinite(z)):
        raise InvalidParameterError(f"normal quantile must be positive, got {z}")
    sigma = interval / z
    return 1.0 / sigma ** 2


def gamma_from_mean_equal_variance(mean: float) -> GammaParameters:
    if not (mean > 0 and math.isfinite(mean)):
        raise InvalidParameterError(f"mean must be positive, got {mean}")
    return GammaParameters(float(mean), 1.0)
