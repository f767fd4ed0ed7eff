"""Dense Gaussian numerics for the latent field conditional on theta."""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse

from engine.errors import NewtonConvergenceError, NotPositiveDefiniteError, UnsupportedModelError
from engine.model import (
    LOG_2PI,
    JointModel,
    block_log_densities,
    check_inputs,
    latent_log_density,
)

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-8
DECREMENT_TOL = 1e-12
NEWTON_MAX_ITER = 100
RIDGE = 1e-8
MIN_STEP_FRACTION = 2.0 ** -40


@dataclass(frozen=True)
class GaussianApprox:
    mode: np.ndarray
    precision_chol: np.ndarray
    log_det_precision: float
    converged_in: int

    @property
    def dim(self) -> int:
        return len(self.mode)

    def marginal_variance(self, i: int) -> float:
        unit = np.zeros(self.dim)
        unit[i] = 1.0
        column = linalg.solve_triangular(self.precision_chol, unit, lower=True)
        return float(column @ column)

    def marginal_variances(self) -> np.ndarray:
        inverse = linalg.solve_triangular(self.precision_chol, np.eye(self.dim), lower=True)
        return np.einsum("ij,ij->j", inverse, inverse)

    def logpdf(self, x: np.ndarray) -> float:
        return gaussian_logpdf(x, self.mode, self.precision_chol)


def cholesky_factor(precision: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; one ridge retry before giving up."""
    try:
        return linalg.cholesky(precision, lower=True)
    except linalg.LinAlgError:
        logger.debug("[NEWTON] precision not positive definite, retrying with ridge %g", RIDGE)
    try:
        return linalg.cholesky(precision + RIDGE * np.eye(len(precision)), lower=True)
    except linalg.LinAlgError as e:
        raise NotPositiveDefiniteError("conditional precision is not positive definite") from e


def log_det_from_chol(chol: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def gaussian_logpdf(x: np.ndarray, mean: np.ndarray, precision_chol: np.ndarray) -> float:
    """Multivariate normal log-density with precision L L^T."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    chol = np.atleast_2d(np.asarray(precision_chol, dtype=float))
    if x.shape != mean.shape or chol.shape != (len(x), len(x)):
        raise ValueError(f"dimension mismatch: x {x.shape}, mean {mean.shape}, factor {chol.shape}")
    r = chol.T @ (x - mean)
    return -0.5 * len(x) * LOG_2PI + 0.5 * log_det_from_chol(chol) - 0.5 * float(r @ r)


def gradient_and_hessian(model: JointModel, v: np.ndarray, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and negative Hessian of log p(y, v | theta) in v."""
    beta_x = model.beta_x(theta)
    q = model.latent_precision(theta)
    grad = -(q @ (v - model.latent_mean(theta)))
    hess = q
    for block in model.blocks:
        design = block.design_at(beta_x)
        eta = design @ v + block.offset
        score, weight = block.score_and_weight(eta, model.block_precision(block, theta))
        grad = grad + design.T @ score
        hess = hess + design.T @ sparse.diags(weight) @ design
    return grad, hess.toarray()


def _objective(model: JointModel, v: np.ndarray, theta: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        value = sum(block_log_densities(model, v, theta).values()) + latent_log_density(model, v, theta)
    return value if math.isfinite(value) else -math.inf


def latent_gaussian_approx(model: JointModel, theta: np.ndarray, start: np.ndarray | None = None,
                           tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER) -> GaussianApprox:
    """Mode and precision of the Gaussian approximation to p(v | y, theta).

    Gaussian models take a single Newton step from zero, which is exact.
    Otherwise Newton with step halving runs from `start` (or the model's
    initial point) until the update is negligible.
    """
    theta = np.asarray(theta, dtype=float)
    if model.is_gaussian:
        v = np.zeros(model.latent_size)
        check_inputs(model, v, theta)
        grad, hess = gradient_and_hessian(model, v, theta)
        chol = cholesky_factor(hess)
        mode = v + linalg.cho_solve((chol, True), grad)
        return GaussianApprox(mode, chol, log_det_from_chol(chol), 1)

    v = np.array(start, dtype=float) if start is not None else model.initial_latent(theta)
    check_inputs(model, v, theta)
    value = _objective(model, v, theta)
    for iteration in range(max_iter + 1):
        grad, hess = gradient_and_hessian(model, v, theta)
        chol = cholesky_factor(hess)
        step = linalg.cho_solve((chol, True), grad)
        # the Newton decrement stays meaningful when tau_copy makes the gradient noisy
        if np.max(np.abs(grad)) < tol or np.max(np.abs(step)) < tol or float(grad @ step) < DECREMENT_TOL:
            return GaussianApprox(v, chol, log_det_from_chol(chol), iteration)
        if iteration == max_iter:
            break
        fraction = 1.0
        while True:
            candidate = v + fraction * step
            candidate_value = _objective(model, candidate, theta)
            if candidate_value >= value - 1e-12 * max(1.0, abs(value)):
                break
            fraction *= 0.5
            if fraction < MIN_STEP_FRACTION:
                raise NewtonConvergenceError(f"step halving stalled at iteration {iteration + 1}")
        v, value = candidate, candidate_value
    raise NewtonConvergenceError(f"Newton did not converge in {max_iter} iterations")


def quadratic_form(model: JointModel, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Precision and right-hand side of the quadratic log p(v | y, theta) of a Gaussian model."""
    beta_x = model.beta_x(theta)
    q = model.latent_precision(theta)
    rhs = q @ model.latent_mean(theta)
    precision = q
    for block in model.blocks:
        design = block.design_at(beta_x)
        score, weight = block.score_and_weight(block.offset, model.block_precision(block, theta))
        rhs = rhs + design.T @ score
        precision = precision + design.T @ sparse.diags(weight) @ design
    return precision.toarray(), rhs


def exact_linear_gaussian_posterior(model: JointModel, theta: np.ndarray) -> GaussianApprox:
    if not model.is_gaussian:
        raise UnsupportedModelError(f"{model.family} likelihood has no closed-form latent posterior")
    theta = np.asarray(theta, dtype=float)
    check_inputs(model, np.zeros(model.latent_size), theta)
    precision, rhs = quadratic_form(model, theta)
    chol = cholesky_factor(precision)
    mode = linalg.cho_solve((chol, True), rhs)
    return GaussianApprox(mode, chol, log_det_from_chol(chol), 0)
