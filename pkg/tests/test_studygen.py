import math

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from studygen import DEFAULT_TRUTH, GroundTruth, StudyRecipe, simulate, write_study


def test_seedling_layout():
    frame, truth = simulate(StudyRecipe(study="seedling", seed=1))
    assert len(frame) == 60
    assert list(frame.columns) == ["y", "w", "z", "sh", "condition", "x_true"]
    assert frame["w"].nunique() == 3
    assert frame["sh"].nunique() == 15
    assert frame["x_true"].nunique() == 15
    assert frame.groupby("sh")["x_true"].nunique().eq(1).all()
    assert frame["w"].mean() == pytest.approx(0.0, abs=1e-12)
    assert frame["z"].mean() == pytest.approx(0.0, abs=1e-12)
    assert (frame["y"] >= 0).all()
    assert truth.n == 60
    assert truth.parameters == DEFAULT_TRUTH["seedling"]


def test_seedling_size_follows_the_design():
    frame, _ = simulate(StudyRecipe(study="seedling", seed=2, conditions=2, houses=3, levels=2))
    assert len(frame) == 12
    assert frame["w"].nunique() == 2


def test_default_sizes():
    assert StudyRecipe(study="ibex", seed=0).size == 26
    assert StudyRecipe(study="framingham", seed=0).size == 641


@pytest.mark.parametrize("study", ["ibex", "framingham", "seedling"])
def test_same_seed_same_frame(study):
    first, _ = simulate(StudyRecipe(study=study, seed=5))
    second, _ = simulate(StudyRecipe(study=study, seed=5))
    pd.testing.assert_frame_equal(first, second)
    other, _ = simulate(StudyRecipe(study=study, seed=6))
    assert not other["x_true"].equals(first["x_true"])


def test_error_free_limits():
    frame, _ = simulate(StudyRecipe(study="framingham", seed=3, n=200, parameters={"tau_u": 1e12}))
    np.testing.assert_allclose(frame["w1"], frame["x_true"], atol=1e-4)
    np.testing.assert_allclose(frame["w2"], frame["x_true"], atol=1e-4)

    frame, _ = simulate(StudyRecipe(study="seedling", seed=3, parameters={"tau_u": 1e12}))
    np.testing.assert_allclose(frame["x_true"], frame["w"], atol=1e-4)


def test_classical_proxy_variance():
    n = 100_000
    frame, truth = simulate(StudyRecipe(study="framingham", seed=4, n=n))
    tau_x, tau_u = truth.parameters["tau_x"], truth.parameters["tau_u"]
    expected = 1 / tau_x + 1 / tau_u
    assert frame["w1"].var() == pytest.approx(expected, abs=3 * expected * math.sqrt(2 / n))
    gap = (frame["w1"] - frame["w2"]).var()
    assert gap == pytest.approx(2 / tau_u, abs=3 * (2 / tau_u) * math.sqrt(2 / n))
    assert frame["z"].mean() == pytest.approx(truth.parameters["z_share"], abs=0.01)


def test_ibex_error_precision_column():
    frame, truth = simulate(StudyRecipe(study="ibex", seed=7, n=500))
    assert list(frame.columns) == ["y", "w", "error.prec", "z1", "z2", "z3", "z4", "x_true"]
    assert (frame["error.prec"] > 0).all()
    np.testing.assert_allclose(frame["z4"], frame["z1"] * frame["z2"])
    standardized = (frame["w"] - frame["x_true"]) * np.sqrt(frame["error.prec"])
    assert standardized.var() == pytest.approx(1 / truth.parameters["tau_u"], rel=0.2)
    # weights shrink where the true level is larger
    assert np.corrcoef(frame["error.prec"], frame["x_true"].abs())[0, 1] < 0


@pytest.mark.parametrize("fields", [
    {"study": "ibex", "seed": 1, "n": 1},
    {"study": "ibex", "seed": 1, "parameters": {"gamma": 1.0}},
    {"study": "framingham", "seed": 1, "parameters": {"tau_u": 0.0}},
    {"study": "framingham", "seed": 1, "parameters": {"z_share": 1.5}},
    {"study": "seedling", "seed": 1, "n": 61},
    {"study": "seedling", "seed": 1, "conditions": 4},
    {"study": "nowhere", "seed": 1},
    {"study": "ibex", "seed": -2},
])
def test_invalid_recipes(fields):
    with pytest.raises(ValidationError):
        StudyRecipe(**fields)


def test_written_study_reads_back(tmp_path):
    frame, truth = simulate(StudyRecipe(study="framingham", seed=9, n=25, parameters={"beta_x": 2.5}))
    csv_path, truth_path = write_study(frame, truth, tmp_path / "out", "fr")
    assert csv_path.name == "fr.csv"
    assert truth_path.name == "fr.truth.json"
    pd.testing.assert_frame_equal(pd.read_csv(csv_path), frame, check_dtype=False)
    loaded = GroundTruth.from_json(truth_path.read_text(encoding="utf-8"))
    assert loaded == truth
    assert loaded.parameters["beta_x"] == 2.5
