import math
from typing import Literal

from pydantic import BaseModel, ConfigDict, model_validator
from scipy import stats


class PriorSpec(BaseModel):
    """Prior on a single scalar: Gaussian(mean, precision), Gamma(shape, rate) or a fixed value.

    A Gaussian with precision 0 is a flat prior; its log-density is taken as 0.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["gaussian", "gamma", "fixed"]
    mean: float = 0.0
    precision: float = 0.0
    shape: float | None = None
    rate: float | None = None
    value: float | None = None

    @model_validator(mode="after")
    def _check_parameters(self):
        if self.kind == "gaussian":
            if not (math.isfinite(self.mean) and math.isfinite(self.precision)):
                raise ValueError("gaussian prior needs a finite mean and precision")
            if self.precision < 0:
                raise ValueError(f"gaussian prior precision must be >= 0, got {self.precision}")
        elif self.kind == "gamma":
            if self.shape is None or self.rate is None:
                raise ValueError("gamma prior needs shape and rate")
            if not (self.shape > 0 and self.rate > 0):
                raise ValueError(f"gamma prior needs shape > 0 and rate > 0, got ({self.shape}, {self.rate})")
        elif self.value is None or not math.isfinite(self.value):
            raise ValueError("fixed prior needs a finite value")
        return self

    @classmethod
    def gaussian(cls, mean: float = 0.0, precision: float = 0.0) -> "PriorSpec":
        return cls(kind="gaussian", mean=mean, precision=precision)

    @classmethod
    def gamma(cls, shape: float, rate: float) -> "PriorSpec":
        return cls(kind="gamma", shape=shape, rate=rate)

    @classmethod
    def fixed(cls, value: float) -> "PriorSpec":
        return cls(kind="fixed", value=value)

    @property
    def is_fixed(self) -> bool:
        return self.kind == "fixed"

    @property
    def is_flat(self) -> bool:
        return self.kind == "gaussian" and self.precision == 0.0

    def center(self) -> float:
        """Prior mean, or the fixed value."""
        if self.kind == "gaussian":
            return self.mean
        if self.kind == "gamma":
            return self.shape / self.rate
        return self.value

    def log_density(self, value: float) -> float:
        """Log-density on the natural scale; fixed and flat priors contribute 0."""
        if self.kind == "fixed" or self.is_flat:
            return 0.0
        if self.kind == "gaussian":
            return float(stats.norm.logpdf(value, loc=self.mean, scale=1.0 / math.sqrt(self.precision)))
        return float(stats.gamma.logpdf(value, self.shape, scale=1.0 / self.rate))

    def scaled_rate(self, factor: float) -> "PriorSpec":
        if self.kind != "gamma":
            return self
        return PriorSpec.gamma(self.shape, self.rate * factor)
