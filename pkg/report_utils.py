import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd
from pydantic import BaseModel

from engine.errors import DataError
from engine.inla import PosteriorMarginal

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.json"
DRAWS_FILE = "draws.csv"
TIMING_FILE = "timing.json"
MARGINALS_DIR = "marginals"
COMPARISON_FILE = "comparison.csv"


# 🧾 Per-parameter summary row
class ParameterSummary(BaseModel):
    parameter: str
    method: str
    mean: float
    sd: float
    q025: float
    q50: float
    q975: float

    @classmethod
    def from_marginal(cls, parameter: str, method: str, marginal: PosteriorMarginal) -> "ParameterSummary":
        return cls(parameter=parameter, method=method, mean=marginal.mean, sd=marginal.sd,
                   q025=marginal.q025, q50=marginal.q50, q975=marginal.q975)


@dataclass
class PosteriorReport:
    method: str
    summaries: list[ParameterSummary]
    marginals: dict[str, PosteriorMarginal] = field(default_factory=dict)
    centering: dict[str, float] = field(default_factory=dict)
    acceptance_rates: dict[str, float] | None = None
    effective_sample_size: dict[str, float] | None = None
    draws: pd.DataFrame | None = None
    ml_estimates: dict[str, dict[str, float]] | None = None
    wall_clock_seconds: float | None = None

    def summary(self, parameter: str) -> ParameterSummary:
        for row in self.summaries:
            if row.parameter == parameter:
                return row
        raise KeyError(f"{self.method} report has no parameter {parameter!r}")

    @property
    def parameters(self) -> list[str]:
        return [row.parameter for row in self.summaries]


def marginal_file_name(parameter: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", parameter) + ".csv"


def summary_record(report: PosteriorReport) -> dict:
    record = {
        "method": report.method,
        "parameters": [row.model_dump() for row in report.summaries],
        "centering": report.centering,
        "marginals": {
            name: f"{MARGINALS_DIR}/{marginal_file_name(name)}"
            for name, marginal in report.marginals.items() if not marginal.coarse
        },
    }
    if report.acceptance_rates is not None:
        record["acceptance_rates"] = report.acceptance_rates
    if report.effective_sample_size is not None:
        record["effective_sample_size"] = report.effective_sample_size
    if report.draws is not None:
        record["draws"] = DRAWS_FILE
    if report.ml_estimates is not None:
        record["ml_estimates"] = report.ml_estimates
    return record


def write_report(report: PosteriorReport, out_dir: str | Path) -> Path:
    """Write <out_dir>/<method>/summary.json plus marginal grids and draws.

    Run time goes to timing.json; summary.json depends only on the inputs and the seed.
    """
    target = Path(out_dir) / report.method
    target.mkdir(parents=True, exist_ok=True)
    record = summary_record(report)
    if record["marginals"]:
        (target / MARGINALS_DIR).mkdir(exist_ok=True)
    for name, relative in record["marginals"].items():
        marginal = report.marginals[name]
        pd.DataFrame({"value": marginal.values, "density": marginal.density}).to_csv(target / relative, index=False)
    if report.draws is not None:
        report.draws.to_csv(target / DRAWS_FILE, index=False)
    (target / SUMMARY_FILE).write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")
    if report.wall_clock_seconds is not None:
        timing = {"method": report.method, "wall_clock_seconds": round(report.wall_clock_seconds, 3)}
        (target / TIMING_FILE).write_text(json.dumps(timing, indent=2) + "\n", encoding="utf-8")
    logger.info("[FIT] wrote %s report to %s", report.method, target)
    return target


def read_summary(path: str | Path) -> list[ParameterSummary]:
    """Summaries from a summary.json file or a directory holding one."""
    path = Path(path)
    if path.is_dir():
        path = path / SUMMARY_FILE
    try:
        record = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise DataError(f"no report summary at {path}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"cannot parse report summary {path}: {e}") from e
    try:
        return [ParameterSummary.model_validate(row) for row in record["parameters"]]
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed report summary {path}: {e}") from e


def comparison_table(summaries: list[list[ParameterSummary]], truth: dict[str, float] | None = None) -> pd.DataFrame:
    """Side-by-side posterior means and 95% intervals, one row per parameter."""
    rows: dict[str, dict[str, float | str]] = {}
    for method_rows in summaries:
        for row in method_rows:
            entry = rows.setdefault(row.parameter, {"parameter": row.parameter})
            entry[f"{row.method}_mean"] = row.mean
            entry[f"{row.method}_q025"] = row.q025
            entry[f"{row.method}_q975"] = row.q975
    table = pd.DataFrame(list(rows.values()))
    if truth is not None and not table.empty:
        table["truth"] = [truth.get(name, float("nan")) for name in table["parameter"]]
        if "naive_mean" in table:
            # naive slope shrunk towards zero relative to the truth
            table["attenuated"] = (
                (table["parameter"] == "beta_x") & (table["naive_mean"].abs() < table["truth"].abs())
            )
    return table


def write_comparison(table: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False)
    logger.info("[FIT] wrote comparison table %s", path)
    return path
