"""Synthetic studies with known truth, shaped like the three applications.

ibex        Gaussian response, classical heteroscedastic error on x, one proxy
            with a per-row error precision column (error.prec).
framingham  Bernoulli response, classical error with two replicate proxies,
            exposure depending on a binary covariate z.
seedling    Poisson counts with a row-level random effect, Berkson error: the
            true x is shared within a shadehouse and scatters around one of
            three assigned light levels.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit

from dataset import ABSENT_TOKEN
from engine.mcmc import make_rng

logger = logging.getLogger(__name__)

Study = Literal["ibex", "framingham", "seedling"]

DEFAULT_TRUTH: dict[str, dict[str, float]] = {
    "ibex": {"beta_0": 0.3, "beta_x": -1.8, "beta_z1": 0.05, "beta_z2": -0.03, "beta_z3": 0.02,
             "beta_z4": 0.0, "alpha_0": 0.2, "tau_x": 100.0, "tau_u": 1.0, "tau_eps": 400.0},
    "framingham": {"beta_0": -1.0, "beta_x": 1.9, "beta_z": 0.4, "alpha_0": 0.0, "alpha_z": 0.0,
                   "tau_x": 10.0, "tau_u": 100.0, "z_share": 0.7},
    "seedling": {"beta_0": 1.5, "beta_x": 0.5, "beta_z": -1.0, "tau_u": 10.0, "tau_gamma": 20.0},
}
DEFAULT_SIZE = {"ibex": 26, "framingham": 641}
SEEDLING_LIGHT = (3.9, 2.7, 1.4)
SEEDLING_DEFOLIATION = (0.0, 0.25, 0.5, 0.75)


class StudyRecipe(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    study: Study
    seed: int = Field(ge=0, lt=2 ** 64)
    n: int | None = Field(default=None, ge=2)
    conditions: int = Field(default=3, ge=1, le=len(SEEDLING_LIGHT))
    houses: int = Field(default=5, ge=1)
    levels: int = Field(default=4, ge=1, le=len(SEEDLING_DEFOLIATION))
    weight_law: tuple[float, float] = (1.0, 2.0)
    weight_scale: float = Field(default=400.0, gt=0)
    parameters: dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_recipe(self):
        unknown = set(self.parameters) - set(DEFAULT_TRUTH[self.study])
        if unknown:
            raise ValueError(f"unknown {self.study} parameters {sorted(unknown)}")
        for name, value in self.truth().items():
            if name.startswith("tau") and not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        share = self.truth().get("z_share", 0.5)
        if not 0 < share < 1:
            raise ValueError(f"z_share must lie in (0, 1), got {share}")
        c0, c1 = self.weight_law
        if c0 <= 0 or c1 < 0:
            raise ValueError(f"weight law needs c0 > 0 and c1 >= 0, got {self.weight_law}")
        if self.study == "seedling" and self.n is not None and self.n != self.size:
            raise ValueError(f"seedling size follows conditions x houses x levels = {self.size}, got n={self.n}")
        return self

    def truth(self) -> dict[str, float]:
        return {**DEFAULT_TRUTH[self.study], **self.parameters}

    @property
    def size(self) -> int:
        if self.study == "seedling":
            return self.conditions * self.houses * self.levels
        return self.n if self.n is not None else DEFAULT_SIZE[self.study]


@dataclass(frozen=True)
class GroundTruth:
    study: str
    seed: int
    n: int
    parameters: dict[str, float]

    def to_json(self) -> str:
        return json.dumps({"study": self.study, "seed": self.seed, "n": self.n, "parameters": self.parameters},
                          indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        raw = json.loads(text)
        return cls(raw["study"], int(raw["seed"]), int(raw["n"]), {k: float(v) for k, v in raw["parameters"].items()})


def _ibex(recipe: StudyRecipe, rng: np.random.Generator) -> pd.DataFrame:
    t, n = recipe.truth(), recipe.size
    z = rng.standard_normal((n, 3))
    z = np.column_stack([z, z[:, 0] * z[:, 1]])
    x = t["alpha_0"] + rng.standard_normal(n) / np.sqrt(t["tau_x"])
    c0, c1 = recipe.weight_law
    # error precision falls as the true level rises
    d = recipe.weight_scale / (c0 + c1 * np.abs(x))
    w = x + rng.standard_normal(n) / np.sqrt(t["tau_u"] * d)
    beta_z = np.array([t["beta_z1"], t["beta_z2"], t["beta_z3"], t["beta_z4"]])
    mean = t["beta_0"] + t["beta_x"] * x + z @ beta_z
    y = mean + rng.standard_normal(n) / np.sqrt(t["tau_eps"])
    return pd.DataFrame({"y": y, "w": w, "error.prec": d, "z1": z[:, 0], "z2": z[:, 1], "z3": z[:, 2],
                         "z4": z[:, 3], "x_true": x})


def _framingham(recipe: StudyRecipe, rng: np.random.Generator) -> pd.DataFrame:
    t, n = recipe.truth(), recipe.size
    z = (rng.uniform(size=n) < t["z_share"]).astype(float)
    x = t["alpha_0"] + t["alpha_z"] * z + rng.standard_normal(n) / np.sqrt(t["tau_x"])
    w1 = x + rng.standard_normal(n) / np.sqrt(t["tau_u"])
    w2 = x + rng.standard_normal(n) / np.sqrt(t["tau_u"])
    y = (rng.uniform(size=n) < expit(t["beta_0"] + t["beta_x"] * x + t["beta_z"] * z)).astype(int)
    return pd.DataFrame({"y": y, "w1": w1, "w2": w2, "z": z, "x_true": x})


def _seedling(recipe: StudyRecipe, rng: np.random.Generator) -> pd.DataFrame:
    t = recipe.truth()
    light = np.array(SEEDLING_LIGHT[:recipe.conditions])
    light = light - light.mean()
    defoliation = np.array(SEEDLING_DEFOLIATION[:recipe.levels])
    defoliation = defoliation - defoliation.mean()
    house_x = light[:, None] + rng.standard_normal((recipe.conditions, recipe.houses)) / np.sqrt(t["tau_u"])

    condition = np.repeat(np.arange(recipe.conditions), recipe.houses * recipe.levels)
    house = np.repeat(np.arange(recipe.conditions * recipe.houses), recipe.levels)
    z = np.tile(defoliation, recipe.conditions * recipe.houses)
    x = house_x.reshape(-1)[house]
    gamma = rng.standard_normal(len(x)) / np.sqrt(t["tau_gamma"])
    y = rng.poisson(np.exp(t["beta_0"] + t["beta_x"] * x + t["beta_z"] * z + gamma))
    return pd.DataFrame({
        "y": y,
        "w": light[condition],
        "z": z,
        "sh": [f"sh{h + 1}" for h in house],
        "condition": condition + 1,
        "x_true": x,
    })


_SIMULATORS = {"ibex": _ibex, "framingham": _framingham, "seedling": _seedling}


def simulate(recipe: StudyRecipe) -> tuple[pd.DataFrame, GroundTruth]:
    """Draw one dataset; the same recipe always yields the same frame."""
    frame = _SIMULATORS[recipe.study](recipe, make_rng(recipe.seed))
    logger.info("[STUDY] simulated %s: %d rows (seed %d)", recipe.study, len(frame), recipe.seed)
    return frame, GroundTruth(recipe.study, recipe.seed, len(frame), recipe.truth())


def write_study(frame: pd.DataFrame, truth: GroundTruth, out_dir: str | Path, stem: str) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, truth_path = out / f"{stem}.csv", out / f"{stem}.truth.json"
    frame.to_csv(csv_path, index=False, na_rep=ABSENT_TOKEN)
    truth_path.write_text(truth.to_json() + "\n", encoding="utf-8")
    logger.info("[STUDY] wrote %s and %s", csv_path, truth_path)
    return csv_path, truth_path
