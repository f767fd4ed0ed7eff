from pathlib import Path

import numpy as np
import pytest
from scipy import sparse

from dataset import Dataset
from engine.config import ModelSpec
from engine.model import JointModel, LatentLayout, ResponseBlock, ThetaLayout, build_joint_model
from studygen import StudyRecipe, simulate

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def load_spec(name: str, **overrides) -> ModelSpec:
    spec = ModelSpec.from_yaml(CONFIG_DIR / f"{name}.yaml")
    return spec.model_copy(update=overrides) if overrides else spec


def study_frame(study: str, seed: int = 1, **fields):
    frame, truth = simulate(StudyRecipe(study=study, seed=seed, **fields))
    return frame, truth


def intercept_only(family, y, prior_precision, prior_mean=0.0):
    """A latent field holding beta_0 alone, observed through every response."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    data = Dataset(y=y, trials=np.ones(n), z=np.zeros((n, 0)), z_names=(), w=np.zeros((1, n)),
                   weights=np.ones(n), group=np.arange(n))
    block = ResponseBlock(role="regression", family=family, observed=y, design=sparse.csr_matrix(np.ones((n, 1))),
                          offset=np.zeros(n), weights=np.ones(n), trials=np.ones(n) if family == "binomial" else None)
    return JointModel(
        name=f"{family}-intercept",
        family=family,
        error_kind=None,
        blocks=(block,),
        latent=LatentLayout((("beta_0", 1),), ("beta_0",)),
        theta_layout=ThetaLayout((), ()),
        prior_mean=np.array([prior_mean]),
        prior_precision=np.array([prior_precision]),
        copy_precision=None,
        data=data,
        centering={},
    )


@pytest.fixture
def ibex_spec() -> ModelSpec:
    return load_spec("ibex")


@pytest.fixture
def framingham_spec() -> ModelSpec:
    return load_spec("framingham")


@pytest.fixture
def seedling_spec() -> ModelSpec:
    return load_spec("seedling")


@pytest.fixture
def ibex_data(ibex_spec) -> Dataset:
    frame, _ = study_frame("ibex", seed=11, n=30)
    return Dataset.from_frame(frame, ibex_spec)


@pytest.fixture
def framingham_data(framingham_spec) -> Dataset:
    frame, _ = study_frame("framingham", seed=12, n=60)
    return Dataset.from_frame(frame, framingham_spec)


@pytest.fixture
def seedling_data(seedling_spec) -> Dataset:
    frame, _ = study_frame("seedling", seed=13)
    return Dataset.from_frame(frame, seedling_spec)


@pytest.fixture
def ibex_model(ibex_spec, ibex_data):
    return build_joint_model(ibex_spec, ibex_data)


@pytest.fixture
def framingham_model(framingham_spec, framingham_data):
    return build_joint_model(framingham_spec, framingham_data)


@pytest.fixture
def seedling_model(seedling_spec, seedling_data):
    return build_joint_model(seedling_spec, seedling_data)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)
