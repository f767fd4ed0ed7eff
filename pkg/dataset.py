import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from engine.config import ModelSpec
from engine.errors import DataError

logger = logging.getLogger(__name__)

ABSENT_TOKEN = "NA"


@dataclass(frozen=True)
class Dataset:
    """Numeric columns of one study, shaped for a ModelSpec.

    Proxies and weights are indexed by latent x element: one element per row
    for classical error, one per group for grouped Berkson error. Absent
    responses and proxies are NaN.
    """

    y: np.ndarray
    trials: np.ndarray
    z: np.ndarray
    z_names: tuple[str, ...]
    w: np.ndarray
    weights: np.ndarray
    group: np.ndarray

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.z.shape[1]

    @property
    def replicates(self) -> int:
        return self.w.shape[0]

    @property
    def n_latent(self) -> int:
        return self.w.shape[1]

    def proxy_means(self) -> np.ndarray:
        """Mean over the observed replicates of each latent element.

        Elements without any observed replicate take the overall proxy mean.
        """
        observed = ~np.isnan(self.w)
        if not observed.any():
            raise DataError("no observed proxy values")
        counts = observed.sum(axis=0)
        totals = np.where(observed, self.w, 0.0).sum(axis=0)
        overall = totals.sum() / counts.sum()
        return np.where(counts > 0, totals / np.maximum(counts, 1), overall)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, spec: ModelSpec) -> "Dataset":
        obs, error = spec.observation, spec.error
        needed = [obs.response, *obs.covariates, *error.proxies]
        if isinstance(obs.trials, str):
            needed.append(obs.trials)
        if error.weights is not None:
            needed.append(error.weights)
        if error.group is not None:
            needed.append(error.group)
        missing = [column for column in needed if column not in frame.columns]
        if missing:
            raise DataError(f"dataset lacks columns referenced by the model config: {missing}")

        y = _numeric_column(frame, obs.response, allow_absent=True)
        if isinstance(obs.trials, str):
            trials = _numeric_column(frame, obs.trials, allow_absent=False)
        else:
            trials = np.full(len(frame), float(obs.trials))
        _check_counts(y, trials, obs.family, obs.response)

        z = np.column_stack([_numeric_column(frame, c, allow_absent=False) for c in obs.covariates]) \
            if obs.covariates else np.zeros((len(frame), 0))
        w_rows = np.vstack([_numeric_column(frame, c, allow_absent=True) for c in error.proxies]) \
            if len(frame) else np.zeros((len(error.proxies), 0))
        weights_rows = _numeric_column(frame, error.weights, allow_absent=False) \
            if error.weights is not None else np.ones(len(frame))
        if np.any(weights_rows <= 0):
            row = int(np.flatnonzero(weights_rows <= 0)[0])
            raise DataError(f"row {row + 1}, column '{error.weights}': error weights must be positive")

        if error.group is None:
            group = np.arange(len(frame))
            w, weights = w_rows, weights_rows
        else:
            group, w, weights = _group_proxies(frame[error.group], w_rows, weights_rows, error.group)

        return cls(
            y=y,
            trials=trials.astype(np.int64).astype(float),
            z=z,
            z_names=tuple(obs.covariates),
            w=w,
            weights=weights,
            group=group,
        )


def load_dataset(path: str | Path, spec: ModelSpec) -> Dataset:
    try:
        frame = pd.read_csv(path, na_values=[ABSENT_TOKEN], keep_default_na=False)
    except FileNotFoundError as e:
        raise DataError(f"dataset not found: {path}") from e
    except pd.errors.EmptyDataError as e:
        raise DataError(f"empty dataset: {path}") from e
    except pd.errors.ParserError as e:
        raise DataError(f"malformed CSV {path}: {e}") from e
    logger.info("[DATA] loaded %s: %d rows, %d columns", path, len(frame), frame.shape[1])
    return Dataset.from_frame(frame, spec)


def _numeric_column(frame: pd.DataFrame, column: str, allow_absent: bool) -> np.ndarray:
    raw = frame[column]
    values = pd.to_numeric(raw, errors="coerce")
    bad = values.isna() & raw.notna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataError(
            f"row {row + 1} (line {row + 2}), column '{column}': not a number: {raw.iloc[row]!r}"
        )
    if not allow_absent and values.isna().any():
        row = int(np.flatnonzero(values.isna().to_numpy())[0])
        raise DataError(f"row {row + 1} (line {row + 2}), column '{column}': absent value not allowed")
    return values.to_numpy(dtype=float)


def _check_counts(y: np.ndarray, trials: np.ndarray, family: str, column: str) -> None:
    present = ~np.isnan(y)
    if family == "gaussian":
        return
    values = y[present]
    bad = (values < 0) | (values != np.round(values))
    if family == "binomial":
        if np.any(trials < 1) or np.any(trials != np.round(trials)):
            raise DataError("binomial trials must be positive integers")
        bad |= values > trials[present]
    if np.any(bad):
        row = int(np.flatnonzero(present)[np.flatnonzero(bad)[0]])
        raise DataError(f"row {row + 1} (line {row + 2}), column '{column}': invalid {family} count {y[row]}")


def _group_proxies(labels: pd.Series, w_rows: np.ndarray, weights_rows: np.ndarray, column: str):
    """Collapse row-level proxies to one value per group, in order of first appearance."""
    if labels.isna().any():
        row = int(np.flatnonzero(labels.isna().to_numpy())[0])
        raise DataError(f"row {row + 1} (line {row + 2}), column '{column}': absent group label")
    group, uniques = pd.factorize(labels, sort=False)
    m = len(uniques)
    w = np.full((w_rows.shape[0], m), np.nan)
    weights = np.empty(m)
    for k in range(m):
        rows = group == k
        for j in range(w_rows.shape[0]):
            values = w_rows[j, rows]
            values = values[~np.isnan(values)]
            if values.size:
                if np.ptp(values) > 1e-12 * max(1.0, np.abs(values).max()):
                    logger.warning("[DATA] proxy values differ within group %r; using their mean", uniques[k])
                w[j, k] = values.mean()
        weights[k] = weights_rows[rows][0]
    return group.astype(np.int64), w, weights
