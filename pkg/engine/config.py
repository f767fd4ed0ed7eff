"""Model configuration: observation, error and exposure models with their priors.

The YAML layout mirrors the classes below, e.g.::

    observation:
      family: binomial
      response: y
      covariates: [z]
      beta_x: {kind: gaussian, mean: 0, precision: 0.01}
    error:
      kind: classical
      proxies: [w1, w2]
      precision: {kind: gamma, shape: 100, rate: 1}
    exposure:
      intercept: {kind: gaussian, mean: 0, precision: 1}
      coefficients: {kind: gaussian, mean: 0, precision: 1}
      precision: {kind: gamma, shape: 10, rate: 1}
    grid: {dz: 0.5, diff_logdens: 20}

error.formulation picks how x enters the latent field: "copy" (default)
stacks the exposure and proxy equations and links beta_x * x to a copy;
"mec" (classical) and "meb" (Berkson) give x its law given the proxies
directly, with beta_x and, for mec, alpha_0 as hyperparameters.
"""

import math
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from engine.errors import ConfigError
from engine.priors import PriorSpec

RESERVED_COLUMN_NAMES = {"x", "0", "u", "eps", "gamma"}
DEFAULT_COPY_PRECISION = 1e9
DEFAULT_X_PRIOR_PRECISION = math.exp(-15)


def _precision_prior(prior: PriorSpec | None, label: str) -> PriorSpec | None:
    if prior is not None and prior.kind == "gaussian":
        raise ValueError(f"{label} takes a gamma or fixed prior")
    if prior is not None and prior.is_fixed and prior.value <= 0:
        raise ValueError(f"{label} fixed at a nonpositive value")
    return prior


class ObservationSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    family: Literal["gaussian", "binomial", "poisson"]
    response: str = "y"
    trials: int | str = 1
    covariates: list[str] = Field(default_factory=list)
    intercept: PriorSpec = PriorSpec.gaussian(0.0, 0.0)
    coefficients: PriorSpec | dict[str, PriorSpec] = PriorSpec.gaussian(0.0, 0.001)
    beta_x: PriorSpec = PriorSpec.gaussian(0.0, 0.001)
    precision: PriorSpec | None = None
    random_effect: PriorSpec | None = None

    @field_validator("covariates")
    @classmethod
    def _check_covariates(cls, columns: list[str]) -> list[str]:
        clashes = RESERVED_COLUMN_NAMES.intersection(columns)
        if clashes:
            raise ValueError(f"covariate names clash with reserved symbols: {sorted(clashes)}")
        if len(set(columns)) != len(columns):
            raise ValueError("covariate names must be unique")
        return columns

    @field_validator("trials")
    @classmethod
    def _check_trials(cls, trials: int | str) -> int | str:
        if isinstance(trials, int) and trials < 1:
            raise ValueError(f"trials must be >= 1, got {trials}")
        return trials

    @model_validator(mode="after")
    def _check_family(self):
        if self.family == "gaussian" and self.precision is None:
            raise ValueError("gaussian family needs a residual precision prior")
        if self.family != "gaussian" and self.precision is not None:
            raise ValueError(f"{self.family} family carries no residual precision")
        _precision_prior(self.precision, "residual precision")
        _precision_prior(self.random_effect, "random-effect precision")
        if self.intercept.kind != "gaussian":
            raise ValueError("regression intercept takes a gaussian prior")
        if self.beta_x.kind == "gamma":
            raise ValueError("beta_x takes a gaussian or fixed prior")
        for prior in self._coefficient_priors():
            if prior.kind != "gaussian":
                raise ValueError("regression coefficients take gaussian priors")
        return self

    def _coefficient_priors(self) -> list[PriorSpec]:
        if isinstance(self.coefficients, PriorSpec):
            return [self.coefficients]
        return list(self.coefficients.values())

    def coefficient_prior(self, column: str) -> PriorSpec:
        if isinstance(self.coefficients, PriorSpec):
            return self.coefficients
        return self.coefficients.get(column, PriorSpec.gaussian(0.0, 0.001))


class ErrorSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["classical", "berkson"]
    proxies: list[str] = Field(min_length=1)
    weights: str | None = None
    group: str | None = None
    precision: PriorSpec
    # copy: x and its scaled copy in the latent field; mec/meb: x given the proxies
    formulation: Literal["copy", "mec", "meb"] = "copy"

    @model_validator(mode="after")
    def _check_error(self):
        _precision_prior(self.precision, "error precision")
        if self.group is not None and self.kind != "berkson":
            raise ValueError("a group column is only meaningful for berkson error")
        if self.formulation == "mec" and self.kind != "classical":
            raise ValueError("the mec formulation needs classical error")
        if self.formulation == "meb" and self.kind != "berkson":
            raise ValueError("the meb formulation needs berkson error")
        return self

    @property
    def replicates(self) -> int:
        return len(self.proxies)


class ExposureSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    intercept: PriorSpec
    coefficients: PriorSpec | dict[str, PriorSpec] = Field(default_factory=dict)
    precision: PriorSpec

    @model_validator(mode="after")
    def _check_exposure(self):
        _precision_prior(self.precision, "exposure precision")
        if self.intercept.kind == "gamma":
            raise ValueError("exposure intercept takes a gaussian or fixed prior")
        priors = [self.coefficients] if isinstance(self.coefficients, PriorSpec) else self.coefficients.values()
        if any(prior.kind == "gamma" for prior in priors):
            raise ValueError("exposure coefficients take gaussian or fixed priors")
        return self

    def coefficient_prior(self, column: str) -> PriorSpec:
        """Prior for alpha_<column>; columns left out of a mapping are fixed at zero."""
        if isinstance(self.coefficients, PriorSpec):
            return self.coefficients
        return self.coefficients.get(column, PriorSpec.fixed(0.0))

    def has_estimated_coefficients(self) -> bool:
        priors = [self.coefficients] if isinstance(self.coefficients, PriorSpec) else self.coefficients.values()
        return any(not prior.is_fixed for prior in priors)


class GridOptions(BaseModel):
    """Per-model grid settings; command-line options override them."""

    model_config = ConfigDict(extra="forbid")

    dz: float | None = Field(default=None, gt=0)
    diff_logdens: float | None = Field(default=None, gt=0)


class ModelSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "model"
    observation: ObservationSpec
    error: ErrorSpec
    exposure: ExposureSpec | None = None
    copy_precision: float | None = DEFAULT_COPY_PRECISION
    x_prior_precision: float = DEFAULT_X_PRIOR_PRECISION
    center: bool = True
    grid: GridOptions = Field(default_factory=GridOptions)

    @model_validator(mode="after")
    def _check_formulation(self):
        if self.error.formulation == "mec" and self.exposure is not None \
                and self.exposure.has_estimated_coefficients():
            raise ValueError("the mec formulation takes an intercept-only exposure model "
                             "(exposure coefficients must be fixed)")
        return self

    @field_validator("copy_precision")
    @classmethod
    def _check_copy(cls, value: float | None) -> float | None:
        if value is not None and not (value > 0 and math.isfinite(value)):
            raise ValueError(f"copy_precision must be positive and finite, got {value}")
        return value

    @field_validator("x_prior_precision")
    @classmethod
    def _check_x_prior(cls, value: float) -> float:
        if not (value >= 0 and math.isfinite(value)):
            raise ValueError(f"x_prior_precision must be >= 0, got {value}")
        return value

    @classmethod
    def from_yaml(cls, path: str | Path) -> "ModelSpec":
        try:
            with open(path, encoding="utf-8") as handle:
                raw = yaml.safe_load(handle)
        except FileNotFoundError as e:
            raise ConfigError(f"model config not found: {path}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse model config {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"model config {path} must be a mapping at the top level")
        try:
            return cls.model_validate(raw)
        except ValidationError as e:
            raise ConfigError(f"invalid model config {path}:\n{e}") from e
