"""Hyperparameter grid exploration and finite-mixture posterior marginals.

The hyperposterior is approximated by the Laplace formula at each support
point; latent marginals are weighted mixtures of the Gaussian conditionals,
hyperparameter marginals are binned grid weights mapped back to the natural
scale.
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
from scipy import optimize, stats
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.interpolate import CubicSpline

from engine.closed_forms import naive_glm_fit
from engine.errors import GridSearchError, NumericalError
from engine.gaussian import latent_gaussian_approx
from engine.model import LOG_2PI, JointModel, joint_log_density

logger = logging.getLogger(__name__)

DEFAULT_DZ = 0.5
DEFAULT_DIFF_LOGDENS = 20.0
MAX_GRID_POINTS = 50_000
MAX_COARSENINGS = 5
MIN_COARSENING = 1.1
COARSENING_MARGIN = 1.05
MAX_AXIS_STEPS = 60
CURVATURE_STEP = 1e-4
LATENT_GRID_POINTS = 75
LATENT_GRID_HALF_WIDTH = 5.0
HYPER_GRID_POINTS = 151
MIN_HYPER_BINS = 3
QUANTILES = (0.025, 0.5, 0.975)
MODE_GRADIENT_TOL = 1e-3


@dataclass(frozen=True)
class PosteriorMarginal:
    values: np.ndarray
    density: np.ndarray
    mean: float
    sd: float
    q025: float
    q50: float
    q975: float
    coarse: bool = False

    @classmethod
    def from_grid(cls, values: np.ndarray, density: np.ndarray) -> "PosteriorMarginal":
        """Moments and quantiles of a gridded density by the trapezoid rule."""
        values = np.asarray(values, dtype=float)
        density = np.asarray(density, dtype=float)
        total = trapezoid(density, values)
        if not (total > 0 and math.isfinite(total)):
            raise NumericalError("marginal density does not integrate to a positive value")
        mean = trapezoid(values * density, values) / total
        variance = trapezoid((values - mean) ** 2 * density, values) / total
        cdf = cumulative_trapezoid(density, values, initial=0.0) / total
        rising = np.concatenate([[True], np.diff(cdf) > 0])
        q025, q50, q975 = np.interp(QUANTILES, cdf[rising], values[rising])
        return cls(values, density, float(mean), math.sqrt(max(variance, 0.0)),
                   float(q025), float(q50), float(q975))

    @classmethod
    def from_weighted_points(cls, values: np.ndarray, weights: np.ndarray) -> "PosteriorMarginal":
        """Moments only, for grids too coarse to carry a density."""
        values = np.asarray(values, dtype=float)
        weights = np.asarray(weights, dtype=float) / np.sum(weights)
        mean = float(weights @ values)
        sd = math.sqrt(max(float(weights @ (values - mean) ** 2), 0.0))
        order = np.argsort(values)
        cdf = np.cumsum(weights[order])
        q = [float(values[order][min(np.searchsorted(cdf, p), len(cdf) - 1)]) for p in QUANTILES]
        return cls(np.empty(0), np.empty(0), mean, sd, *q, coarse=True)


@dataclass(frozen=True)
class GridPoint:
    psi: np.ndarray
    z: np.ndarray
    log_post: float
    weight: float
    latent_mode: np.ndarray | None = None
    latent_variance: np.ndarray | None = None


@dataclass(frozen=True)
class IntegrationGrid:
    points: tuple[GridPoint, ...]
    mode: np.ndarray
    names: tuple[str, ...]
    internal_scale: tuple[str, ...]
    eigenvectors: np.ndarray
    eigenvalues: np.ndarray
    dz: float
    diff_logdens: float

    @property
    def dim(self) -> int:
        return len(self.mode)

    @property
    def weights(self) -> np.ndarray:
        return np.array([p.weight for p in self.points])

    def index(self, j: int | str) -> int:
        if isinstance(j, str):
            try:
                return self.names.index(j)
            except ValueError:
                raise IndexError(f"unknown hyperparameter {j!r}; grid covers {self.names}") from None
        if not 0 <= j < self.dim:
            raise IndexError(f"hyperparameter index {j} out of range for {self.dim} coordinates")
        return j

    def marginal_sd(self, j: int) -> float:
        """Standard deviation of coordinate j under the Gaussian fitted at the mode."""
        return math.sqrt(float(np.sum(self.eigenvectors[j] ** 2 / self.eigenvalues)))


class _DensityEvaluator:
    def __init__(self, log_density: Callable[[np.ndarray], float]):
        self.log_density = log_density

    def evaluate(self, psi: np.ndarray) -> tuple[float, Any]:
        return self.log_density(psi), None

    def anchor(self, psi: np.ndarray) -> None:
        pass


class _LaplaceEvaluator:
    """Laplace hyperposterior in internal coordinates, Jacobian included."""

    def __init__(self, model: JointModel):
        self.model = model
        self.layout = model.theta_layout
        self.warm_start: np.ndarray | None = None

    def _approx(self, psi: np.ndarray):
        theta = self.layout.from_internal(psi)
        approx = latent_gaussian_approx(self.model, theta, start=self.warm_start)
        value = _laplace_value(self.model, theta, approx) + self.layout.log_jacobian(psi)
        return value, approx

    def log_density(self, psi: np.ndarray) -> float:
        return self._approx(psi)[0]

    def evaluate(self, psi: np.ndarray) -> tuple[float, Any]:
        value, approx = self._approx(psi)
        return value, (approx.mode, approx.marginal_variances())

    def anchor(self, psi: np.ndarray) -> None:
        self.warm_start = self._approx(psi)[1].mode


def _laplace_value(model: JointModel, theta: np.ndarray, approx) -> float:
    return (joint_log_density(model, approx.mode, theta)
            - 0.5 * approx.log_det_precision + 0.5 * approx.dim * LOG_2PI)


def log_hyperposterior(model: JointModel, theta: np.ndarray, start: np.ndarray | None = None) -> float:
    """Laplace approximation of log p(theta | y) on the natural scale, up to a per-model constant."""
    theta = np.asarray(theta, dtype=float)
    approx = latent_gaussian_approx(model, theta, start=start)
    return _laplace_value(model, theta, approx)


def initial_internal(model: JointModel) -> np.ndarray:
    """Prior means, with beta_x started at the naive maximum-likelihood slope when available."""
    layout = model.theta_layout
    theta = layout.initial()
    if "beta_x" in layout.free_names:
        data = model.data
        try:
            fit = naive_glm_fit(data.y, data.proxy_means()[data.group], data.z, model.family, data.trials)
            theta[layout.index("beta_x")] = fit.coef[1]
        except NumericalError as e:
            logger.info("[GRID] naive start for beta_x unavailable (%s); using the prior mean", e)
    return layout.to_internal(theta)


def explore_grid(model: JointModel, dz: float = DEFAULT_DZ, diff_logdens: float = DEFAULT_DIFF_LOGDENS,
                 workers: int = 1) -> IntegrationGrid:
    layout = model.theta_layout
    grid = _explore(_LaplaceEvaluator(model), initial_internal(model), layout.scales, layout.free_names,
                    dz, diff_logdens, workers)
    logger.info("[GRID] %s: %d points over %s", model.name, len(grid.points), grid.names)
    return grid


def explore_log_density(log_density: Callable[[np.ndarray], float], start: np.ndarray,
                        scales: tuple[str, ...] | None = None, names: tuple[str, ...] | None = None,
                        dz: float = DEFAULT_DZ, diff_logdens: float = DEFAULT_DIFF_LOGDENS,
                        workers: int = 1) -> IntegrationGrid:
    """Grid exploration of an arbitrary log-density given in internal coordinates."""
    start = np.atleast_1d(np.asarray(start, dtype=float))
    scales = scales or ("identity",) * len(start)
    names = names or tuple(f"theta{k}" for k in range(len(start)))
    return _explore(_DensityEvaluator(log_density), start, scales, names, dz, diff_logdens, workers)


def _safe_evaluate(evaluator, psi: np.ndarray):
    try:
        value, payload = evaluator.evaluate(psi)
    except NumericalError as e:
        logger.warning("[GRID] discarding point %s: %s", np.round(psi, 4), e)
        return None
    if not math.isfinite(value):
        return None
    return value, payload


def _fd_gradient(f: Callable, psi: np.ndarray, h: float) -> np.ndarray:
    grad = np.empty(len(psi))
    for i in range(len(psi)):
        e = np.zeros(len(psi))
        e[i] = h
        grad[i] = (f(psi + e) - f(psi - e)) / (2 * h)
    return grad


def _fd_hessian(f: Callable, psi: np.ndarray, h: float) -> np.ndarray:
    k = len(psi)
    hess = np.empty((k, k))
    f0 = f(psi)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h
        hess[i, i] = (f(psi + ei) - 2 * f0 + f(psi - ei)) / h ** 2
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = h
            hess[i, j] = hess[j, i] = (
                f(psi + ei + ej) - f(psi + ei - ej) - f(psi - ei + ej) + f(psi - ei - ej)
            ) / (4 * h ** 2)
    return hess


def _find_mode(f: Callable, start: np.ndarray) -> np.ndarray:
    def safe(psi: np.ndarray) -> float:
        try:
            value = f(psi)
        except NumericalError:
            return -1e30
        return value if math.isfinite(value) else -1e30

    result = optimize.minimize(
        lambda psi: -safe(psi), start, method="BFGS",
        jac=lambda psi: -_fd_gradient(safe, psi, CURVATURE_STEP),
        options={"gtol": 1e-6, "maxiter": 500},
    )
    psi, value = result.x, safe(result.x)
    for _ in range(5):
        grad = _fd_gradient(safe, psi, CURVATURE_STEP)
        hess = _fd_hessian(safe, psi, CURVATURE_STEP)
        try:
            delta = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            break
        candidate = psi + delta
        candidate_value = safe(candidate)
        if candidate_value < value:
            break
        psi, value = candidate, candidate_value
        if np.max(np.abs(delta)) < 1e-10:
            break
    grad = _fd_gradient(safe, psi, CURVATURE_STEP)
    if np.max(np.abs(grad)) > MODE_GRADIENT_TOL:
        raise GridSearchError(f"hyperposterior mode search did not converge (gradient {grad}, {result.message})")
    return psi


def _explore(evaluator, start: np.ndarray, scales: tuple[str, ...], names: tuple[str, ...],
             dz: float, diff_logdens: float, workers: int) -> IntegrationGrid:
    if not dz > 0:
        raise ValueError(f"dz must be positive, got {dz}")
    if not diff_logdens > 0:
        raise ValueError(f"diff_logdens must be positive, got {diff_logdens}")
    k = len(start)
    if k == 0:
        evaluator.anchor(start)
        value, payload = evaluator.evaluate(start)
        point = _grid_point(start, start, value, 1.0, payload)
        return IntegrationGrid((point,), start, names, scales, np.empty((0, 0)), np.empty(0), dz, diff_logdens)

    mode = _find_mode(evaluator.log_density, np.asarray(start, dtype=float))
    curvature = -_fd_hessian(evaluator.log_density, mode, CURVATURE_STEP)
    eigenvalues, eigenvectors = np.linalg.eigh(0.5 * (curvature + curvature.T))
    if np.any(eigenvalues <= 0):
        raise GridSearchError(f"hyperposterior curvature at the mode is not negative definite: {eigenvalues}")
    transform = eigenvectors / np.sqrt(eigenvalues)
    evaluator.anchor(mode)

    def locate(index: tuple[int, ...]) -> np.ndarray:
        return mode + transform @ (dz * np.asarray(index, dtype=float))

    center = _safe_evaluate(evaluator, mode)
    if center is None:
        raise GridSearchError("the hyperposterior mode itself cannot be evaluated")
    for attempt in range(MAX_COARSENINGS + 1):
        results, drops = _walk_axes(evaluator, locate, center, k, diff_logdens)
        fill_in = [
            index for index in itertools.product(*(sorted(d) for d in drops))
            if sum(1 for i in index if i != 0) >= 2 and sum(d[i] for d, i in zip(drops, index)) <= diff_logdens
        ]
        needed = len(results) + len(fill_in)
        if needed <= MAX_GRID_POINTS:
            break
        if attempt == MAX_COARSENINGS:
            raise GridSearchError(f"grid would need {needed} points at dz={dz:g}; increase dz")
        # lattice size scales as dz^-k
        coarser = dz * max(MIN_COARSENING, COARSENING_MARGIN * (needed / MAX_GRID_POINTS) ** (1.0 / k))
        logger.warning("[GRID] %d points at dz=%g exceed the %d-point cap; coarsening to dz=%.3g",
                       needed, dz, MAX_GRID_POINTS, coarser)
        dz = coarser
    psis = [locate(index) for index in fill_in]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda psi: _safe_evaluate(evaluator, psi), psis))
    else:
        outcomes = [_safe_evaluate(evaluator, psi) for psi in psis]
    results.update(zip(fill_in, outcomes))

    kept = {index: outcome for index, outcome in results.items() if outcome is not None}
    top = max(outcome[0] for outcome in kept.values())
    kept = {index: outcome for index, outcome in kept.items() if outcome[0] >= top - diff_logdens}
    ordered = sorted(kept)
    log_posts = np.array([kept[index][0] for index in ordered])
    weights = np.exp(log_posts - top)
    weights /= weights.sum()
    points = tuple(
        _grid_point(locate(index), dz * np.asarray(index, dtype=float), kept[index][0], float(weight),
                    kept[index][1])
        for index, weight in zip(ordered, weights)
    )
    return IntegrationGrid(points, mode, names, scales, eigenvectors, eigenvalues, dz, diff_logdens)


def _walk_axes(evaluator, locate: Callable, center, k: int,
               diff_logdens: float) -> tuple[dict, list[dict[int, float]]]:
    """Step out along each standardized axis until the log-density drops by more than the cutoff."""
    results = {(0,) * k: center}
    drops: list[dict[int, float]] = [{0: 0.0} for _ in range(k)]
    for axis in range(k):
        for sign in (1, -1):
            for step in range(1, MAX_AXIS_STEPS + 1):
                index = tuple(sign * step if a == axis else 0 for a in range(k))
                outcome = _safe_evaluate(evaluator, locate(index))
                results[index] = outcome
                if outcome is None or center[0] - outcome[0] > diff_logdens:
                    break
                drops[axis][sign * step] = center[0] - outcome[0]
            else:
                logger.warning("[GRID] axis %d did not reach the cutoff within %d steps", axis, MAX_AXIS_STEPS)
    return results, drops


def _grid_point(psi, z, value, weight, payload) -> GridPoint:
    latent_mode, latent_variance = payload if payload is not None else (None, None)
    return GridPoint(np.asarray(psi, dtype=float), np.asarray(z, dtype=float), float(value), weight,
                     latent_mode, latent_variance)


def latent_marginal(model: JointModel, grid: IntegrationGrid, i: int | str) -> PosteriorMarginal:
    """Mixture over grid points of the Gaussian conditionals of latent coordinate i."""
    if not grid.points:
        raise ValueError("empty integration grid")
    index = model.latent.index(i)
    if grid.points[0].latent_mode is None:
        raise ValueError("grid carries no latent conditionals")
    weights = grid.weights
    means = np.array([p.latent_mode[index] for p in grid.points])
    variances = np.array([p.latent_variance[index] for p in grid.points])
    if not np.any(variances > 0):
        logger.warning("[GRID] latent %s has no conditional spread; reporting point masses", i)
        return PosteriorMarginal.from_weighted_points(means, weights)
    mean = float(weights @ means)
    sd = math.sqrt(max(float(weights @ (variances + means ** 2)) - mean ** 2, 0.0))
    if sd == 0.0:
        sd = math.sqrt(float(np.max(variances)))
    values = np.linspace(mean - LATENT_GRID_HALF_WIDTH * sd, mean + LATENT_GRID_HALF_WIDTH * sd,
                         LATENT_GRID_POINTS)
    # components without spread are smeared over one grid cell
    spacing = values[1] - values[0]
    scales = np.sqrt(np.where(variances > 0, variances, spacing ** 2))
    density = stats.norm.pdf(values[:, None], loc=means, scale=scales) @ weights
    return PosteriorMarginal.from_grid(values, density)


def hyper_marginal(grid: IntegrationGrid, j: int | str) -> PosteriorMarginal:
    """Marginal of hyperparameter j on its natural scale."""
    if not grid.points:
        raise ValueError("empty integration grid")
    j = grid.index(j)
    coordinate = np.array([p.psi[j] for p in grid.points])
    weights = grid.weights
    log_scale = grid.internal_scale[j] == "log"
    width = grid.dz * grid.marginal_sd(j)
    bins = np.rint((coordinate - grid.mode[j]) / width).astype(int)
    occupied = np.unique(bins)
    if len(occupied) < MIN_HYPER_BINS:
        logger.warning("[GRID] %s spans %d bins; reporting moments only", grid.names[j], len(occupied))
        natural = np.exp(coordinate) if log_scale else coordinate
        return PosteriorMarginal.from_weighted_points(natural, weights)

    masses = np.array([weights[bins == b].sum() for b in occupied])
    centers = grid.mode[j] + occupied * width
    spline = CubicSpline(centers, np.log(masses / width))
    fine = np.linspace(centers[0], centers[-1], HYPER_GRID_POINTS)
    density = np.exp(spline(fine))
    if log_scale:
        values = np.exp(fine)
        return PosteriorMarginal.from_grid(values, density / values)
    return PosteriorMarginal.from_grid(fine, density)
