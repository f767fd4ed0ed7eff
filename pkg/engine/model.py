"""Stacked joint model: regression, exposure and proxy equations over one latent field.

The latent field is ordered (beta_0, beta_z, alpha_0, alpha_z, x, x_star, gamma);
symbols a model does not use have length zero. Hyperparameters are ordered
(beta_x, tau_u, tau_x, alpha_0, tau_eps, tau_gamma), again restricted to those
present; alpha_0 is a hyperparameter only in the mec formulation, where x
carries its law given the proxies instead of the exposure and proxy blocks.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from scipy import sparse
from scipy.special import gammaln

from dataset import Dataset
from engine.closed_forms import mec_conditional, mec_marginal_w, meb_conditional
from engine.config import ModelSpec
from engine.errors import DataError, InvalidParameterError, ModelSpecError, UnsupportedModelError
from engine.priors import PriorSpec

logger = logging.getLogger(__name__)

Role = Literal["regression", "exposure", "proxy"]
Family = Literal["gaussian", "binomial", "poisson"]

LOG_2PI = math.log(2.0 * math.pi)
ROLES: tuple[Role, ...] = ("regression", "exposure", "proxy")
LATENT_ORDER = ("beta_0", "beta_x", "beta_z", "alpha_0", "alpha_z", "x", "x_star", "gamma")
THETA_ORDER = ("beta_x", "tau_u", "tau_x", "alpha_0", "tau_eps", "tau_gamma")


@dataclass(frozen=True)
class LatentLayout:
    blocks: tuple[tuple[str, int], ...]
    names: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.names)

    def has(self, symbol: str) -> bool:
        return any(s == symbol and length > 0 for s, length in self.blocks)

    def slice(self, symbol: str) -> slice:
        start = 0
        for s, length in self.blocks:
            if s == symbol:
                return slice(start, start + length)
            start += length
        return slice(start, start)

    def index(self, name: str | int) -> int:
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < self.size:
                raise IndexError(f"latent index {name} out of range for size {self.size}")
            return int(name)
        try:
            return self.names.index(name)
        except ValueError:
            raise IndexError(f"unknown latent coordinate {name!r}") from None

    def insert_after(self, symbol: str, new_symbol: str, names: list[str]) -> "LatentLayout":
        blocks, out_names, cursor = [], [], 0
        for s, length in self.blocks:
            blocks.append((s, length))
            out_names.extend(self.names[cursor:cursor + length])
            cursor += length
            if s == symbol:
                blocks.append((new_symbol, len(names)))
                out_names.extend(names)
        return LatentLayout(tuple(blocks), tuple(out_names))


@dataclass(frozen=True)
class ThetaLayout:
    names: tuple[str, ...]
    priors: tuple[PriorSpec, ...]

    @property
    def size(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown hyperparameter {name!r}; layout is {self.names}") from None

    @property
    def free_indices(self) -> tuple[int, ...]:
        return tuple(i for i, prior in enumerate(self.priors) if not prior.is_fixed)

    @property
    def free_names(self) -> tuple[str, ...]:
        return tuple(self.names[i] for i in self.free_indices)

    @property
    def scales(self) -> tuple[str, ...]:
        """Internal scale per free coordinate: log for precisions, identity otherwise."""
        return tuple("log" if self.names[i].startswith("tau") else "identity" for i in self.free_indices)

    def initial(self) -> np.ndarray:
        return np.array([prior.center() for prior in self.priors], dtype=float)

    def make(self, **values: float) -> np.ndarray:
        theta = self.initial()
        for name, value in values.items():
            theta[self.index(name)] = value
        return theta

    def to_internal(self, theta: np.ndarray) -> np.ndarray:
        free = np.asarray(theta, dtype=float)[list(self.free_indices)]
        logs = np.array([s == "log" for s in self.scales], dtype=bool)
        free[logs] = np.log(free[logs])
        return free

    def from_internal(self, psi: np.ndarray) -> np.ndarray:
        theta = self.initial()
        psi = np.asarray(psi, dtype=float)
        for k, (i, scale) in enumerate(zip(self.free_indices, self.scales)):
            theta[i] = math.exp(psi[k]) if scale == "log" else psi[k]
        return theta

    def log_jacobian(self, psi: np.ndarray) -> float:
        return float(sum(p for p, scale in zip(psi, self.scales) if scale == "log"))

    def log_prior(self, theta: np.ndarray) -> float:
        return float(sum(self.priors[i].log_density(theta[i]) for i in self.free_indices))


@dataclass(frozen=True)
class ResponseBlock:
    """One column-role of the stacked response; absent rows (NaN) carry no likelihood."""

    role: Role
    family: Family
    observed: np.ndarray
    design: sparse.csr_matrix
    offset: np.ndarray
    weights: np.ndarray
    precision: str | None = None
    trials: np.ndarray | None = None
    beta_x_design: sparse.csr_matrix | None = None

    @property
    def size(self) -> int:
        return len(self.observed)

    @property
    def active(self) -> np.ndarray:
        return ~np.isnan(self.observed)

    def linear_predictor(self, v: np.ndarray, beta_x: float) -> np.ndarray:
        eta = self.design @ v + self.offset
        if self.beta_x_design is not None:
            eta = eta + beta_x * (self.beta_x_design @ v)
        return eta

    def design_at(self, beta_x: float) -> sparse.csr_matrix:
        if self.beta_x_design is None:
            return self.design
        return (self.design + beta_x * self.beta_x_design).tocsr()

    def log_likelihood(self, eta: np.ndarray, precision: float) -> float:
        active = self.active
        y = np.where(active, self.observed, 0.0)
        if self.family == "gaussian":
            p = precision * self.weights
            terms = 0.5 * np.log(p) - 0.5 * LOG_2PI - 0.5 * p * (y - eta) ** 2
        elif self.family == "binomial":
            n = self.trials
            terms = y * eta - n * np.logaddexp(0.0, eta) + gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
        else:
            with np.errstate(over="ignore"):
                terms = y * eta - np.exp(eta) - gammaln(y + 1)
        return float(np.sum(terms[active]))

    def score_and_weight(self, eta: np.ndarray, precision: float) -> tuple[np.ndarray, np.ndarray]:
        """First derivative and negative second derivative of the log-likelihood in eta."""
        active = self.active
        y = np.where(active, self.observed, 0.0)
        if self.family == "gaussian":
            weight = precision * self.weights
            score = weight * (y - eta)
        elif self.family == "binomial":
            pi = 0.5 * (1.0 + np.tanh(0.5 * eta))
            score = y - self.trials * pi
            weight = self.trials * pi * (1.0 - pi)
        else:
            with np.errstate(over="ignore"):
                mu = np.exp(eta)
            score = y - mu
            weight = mu
        return np.where(active, score, 0.0), np.where(active, weight, 0.0)


@dataclass(frozen=True)
class ProxyConditional:
    """Law of x given its proxies, for the mec and meb formulations.

    Replicates enter through their mean with weight k_i * d_i, where k_i counts
    the observed replicates of element i. Elements without a proxy keep the
    exposure law (classical) or the base prior N(0, base_precision) (Berkson).
    """

    kind: Literal["classical", "berkson"]
    counts: np.ndarray
    proxy_mean: np.ndarray
    spread: np.ndarray
    weights: np.ndarray
    exposure_offset: np.ndarray
    base_precision: float

    @classmethod
    def from_proxies(cls, kind: Literal["classical", "berkson"], w: np.ndarray, weights: np.ndarray,
                     exposure_offset: np.ndarray, base_precision: float) -> "ProxyConditional":
        w = np.atleast_2d(np.asarray(w, dtype=float))
        present = ~np.isnan(w)
        counts = present.sum(axis=0)
        means = np.where(present, w, 0.0).sum(axis=0) / np.maximum(counts, 1)
        spread = np.where(present, (w - means) ** 2, 0.0).sum(axis=0)
        return cls(kind, _frozen(counts), _frozen(means), _frozen(spread), _frozen(weights),
                   _frozen(exposure_offset), float(base_precision))

    @property
    def present(self) -> np.ndarray:
        return self.counts > 0

    def moments(self, tau_u: float, tau_x: float = 0.0, alpha_0: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        """Mean and precision of each x element given the proxies."""
        present = self.present
        d = self.weights[present] * self.counts[present]
        if self.kind == "classical":
            mu = alpha_0 + self.exposure_offset
            mean, precision = mu.copy(), np.full(len(mu), float(tau_x))
            law = mec_conditional(self.proxy_mean[present] - mu[present], 0.0, tau_x, tau_u, d)
            mean[present] = law.mean + mu[present]
            precision[present] = law.precision_diag
        else:
            mean, precision = np.zeros(len(self.counts)), np.full(len(self.counts), self.base_precision)
            law = meb_conditional(self.proxy_mean[present], tau_u, 1.0, d)
            mean[present] = law.mean
            precision[present] = law.precision
        return mean, precision

    def proxy_log_density(self, tau_u: float, tau_x: float = 0.0, alpha_0: float = 0.0) -> float:
        """log p(w | theta) for classical error; Berkson proxies are design values and contribute nothing."""
        if self.kind == "berkson":
            return 0.0
        present = self.present
        k = self.counts[present].astype(float)
        d = self.weights[present]
        mu = alpha_0 + self.exposure_offset[present]
        marginal = mec_marginal_w(0.0, tau_x, tau_u, d * k)
        value = float(np.sum(marginal.logpdf(self.proxy_mean[present] - mu)))
        # replicate scatter around their mean
        b = tau_u * d
        within = 0.5 * (k - 1) * (np.log(b) - LOG_2PI) - 0.5 * np.log(k) - 0.5 * b * self.spread[present]
        return value + float(np.sum(within))


@dataclass(frozen=True)
class JointModel:
    name: str
    family: Family
    error_kind: Literal["classical", "berkson"] | None
    blocks: tuple[ResponseBlock, ...]
    latent: LatentLayout
    theta_layout: ThetaLayout
    prior_mean: np.ndarray
    prior_precision: np.ndarray
    copy_precision: float | None
    data: Dataset
    centering: dict[str, float]
    x_conditional: ProxyConditional | None = None

    @property
    def latent_size(self) -> int:
        return self.latent.size

    @property
    def is_gaussian(self) -> bool:
        return all(block.family == "gaussian" for block in self.blocks)

    def block(self, role: Role) -> ResponseBlock | None:
        for block in self.blocks:
            if block.role == role:
                return block
        return None

    def block_sizes(self) -> tuple[int, int, int]:
        return tuple(self.block(role).size if self.block(role) is not None else 0 for role in ROLES)

    def row_roles(self) -> np.ndarray:
        return np.concatenate([np.full(block.size, block.role, dtype=object) for block in self.blocks])

    def response_matrix(self) -> np.ndarray:
        """Stacked response with one column per role; entries outside a row's role are NaN."""
        out = np.full((sum(self.block_sizes()), len(ROLES)), np.nan)
        start = 0
        for block in self.blocks:
            out[start:start + block.size, ROLES.index(block.role)] = block.observed
            start += block.size
        return out

    def beta_x(self, theta: np.ndarray) -> float:
        if "beta_x" in self.theta_layout.names:
            return float(theta[self.theta_layout.index("beta_x")])
        return 0.0

    def block_precision(self, block: ResponseBlock, theta: np.ndarray) -> float:
        if block.precision is None:
            return 1.0
        return float(theta[self.theta_layout.index(block.precision)])

    def _conditional_arguments(self, theta: np.ndarray) -> dict[str, float]:
        names = self.theta_layout.names
        return {name: float(theta[names.index(name)]) for name in ("tau_u", "tau_x", "alpha_0") if name in names}

    def x_moments(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.x_conditional.moments(**self._conditional_arguments(theta))

    def proxy_log_density(self, theta: np.ndarray) -> float:
        if self.x_conditional is None:
            return 0.0
        return self.x_conditional.proxy_log_density(**self._conditional_arguments(theta))

    def latent_mean(self, theta: np.ndarray) -> np.ndarray:
        if self.x_conditional is None:
            return self.prior_mean
        mean = self.prior_mean.copy()
        mean[self.latent.slice("x")] = self.x_moments(theta)[0]
        return mean

    def latent_precision(self, theta: np.ndarray) -> sparse.csr_matrix:
        diag = self.prior_precision.copy()
        if self.x_conditional is not None:
            diag[self.latent.slice("x")] = self.x_moments(theta)[1]
        rows, cols, vals = [], [], []
        if self.latent.has("gamma"):
            diag[self.latent.slice("gamma")] = theta[self.theta_layout.index("tau_gamma")]
        if self.copy_precision is not None:
            tau, beta = self.copy_precision, self.beta_x(theta)
            xs, cs = self.latent.slice("x"), self.latent.slice("x_star")
            diag[xs] += beta * beta * tau
            diag[cs] = tau
            x_idx, c_idx = np.arange(xs.start, xs.stop), np.arange(cs.start, cs.stop)
            coupling = np.full(len(x_idx), -beta * tau)
            rows = np.concatenate([x_idx, c_idx])
            cols = np.concatenate([c_idx, x_idx])
            vals = np.concatenate([coupling, coupling])
        d = self.latent_size
        q = sparse.diags(diag, format="csr", shape=(d, d))
        if len(rows):
            q = q + sparse.csr_matrix((vals, (rows, cols)), shape=(d, d))
        return q.tocsr()

    def latent_log_normalizer(self, theta: np.ndarray) -> float:
        """log of the latent prior normalizing constant over its proper coordinates."""
        proper = self.prior_precision > 0
        value = 0.5 * float(np.sum(np.log(self.prior_precision[proper])))
        count = int(proper.sum())
        if self.latent.has("gamma"):
            n = self.latent.slice("gamma").stop - self.latent.slice("gamma").start
            value += 0.5 * n * math.log(theta[self.theta_layout.index("tau_gamma")])
            count += n
        if self.copy_precision is not None:
            m = self.latent.slice("x_star").stop - self.latent.slice("x_star").start
            value += 0.5 * m * math.log(self.copy_precision)
            count += m
        if self.x_conditional is not None:
            precision = self.x_moments(theta)[1]
            value += 0.5 * float(np.sum(np.log(precision)))
            count += len(precision)
        return value - 0.5 * count * LOG_2PI

    def initial_latent(self, theta: np.ndarray) -> np.ndarray:
        """Starting point for mode searches: proxies for x, a link-scale mean for beta_0."""
        v = self.prior_mean.copy()
        if self.latent.has("x"):
            x = self.data.proxy_means()
            v[self.latent.slice("x")] = x
            if self.latent.has("x_star"):
                v[self.latent.slice("x_star")] = self.beta_x(theta) * x
        y = self.data.y[~np.isnan(self.data.y)]
        if y.size:
            if self.family == "binomial":
                share = np.clip(y.sum() / self.data.trials[~np.isnan(self.data.y)].sum(), 0.01, 0.99)
                v[self.latent.slice("beta_0")] = math.log(share / (1.0 - share))
            elif self.family == "poisson":
                v[self.latent.slice("beta_0")] = math.log(max(y.mean(), 0.01))
            else:
                v[self.latent.slice("beta_0")] = y.mean()
        return v


def check_inputs(model: JointModel, v: np.ndarray, theta: np.ndarray) -> None:
    v = np.asarray(v, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if v.shape != (model.latent_size,):
        raise InvalidParameterError(f"latent vector has shape {v.shape}, expected ({model.latent_size},)")
    if theta.shape != (model.theta_layout.size,):
        raise InvalidParameterError(f"theta has shape {theta.shape}, expected ({model.theta_layout.size},)")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(theta))):
        raise InvalidParameterError("non-finite latent or hyperparameter values")
    for name, value in zip(model.theta_layout.names, theta):
        if name.startswith("tau") and value <= 0:
            raise InvalidParameterError(f"{name} must be positive, got {value}")


def latent_log_density(model: JointModel, v: np.ndarray, theta: np.ndarray) -> float:
    r = v - model.latent_mean(theta)
    q = model.latent_precision(theta)
    return model.latent_log_normalizer(theta) - 0.5 * float(r @ (q @ r))


def block_log_densities(model: JointModel, v: np.ndarray, theta: np.ndarray) -> dict[str, float]:
    beta_x = model.beta_x(theta)
    out = {role: 0.0 for role in ROLES}
    for block in model.blocks:
        eta = block.linear_predictor(v, beta_x)
        out[block.role] = block.log_likelihood(eta, model.block_precision(block, theta))
    return out


def joint_log_density(model: JointModel, v: np.ndarray, theta: np.ndarray) -> float:
    """log p(y|v,theta) + log p(v|theta) + log p(theta), up to a per-model constant.

    Under the mec formulation the proxies' marginal log p(w|theta) is included.
    """
    check_inputs(model, v, theta)
    v = np.asarray(v, dtype=float)
    theta = np.asarray(theta, dtype=float)
    likelihood = sum(block_log_densities(model, v, theta).values()) + model.proxy_log_density(theta)
    return likelihood + latent_log_density(model, v, theta) + model.theta_layout.log_prior(theta)


# Builders


def build_joint_model(spec: ModelSpec, data: Dataset) -> JointModel:
    _check_structure(spec, data)
    centered, centering = _center(spec, data)
    if spec.error.formulation == "copy":
        model = _assemble(spec, centered, centering)
        if spec.copy_precision is not None:
            model = copy_augment(model, spec.copy_precision)
    else:
        model = _assemble_conditional(spec, centered, centering)
    logger.info(
        "[MODEL] built %s (%s, %s error, %s): blocks %s, latent %d, theta %s",
        model.name, model.family, model.error_kind, spec.error.formulation, model.block_sizes(),
        model.latent_size, model.theta_layout.names,
    )
    return model


def build_naive_model(spec: ModelSpec, data: Dataset) -> JointModel:
    """The regression equation alone, with the proxy standing in for x under the beta_x prior."""
    if data.n == 0:
        raise DataError("empty dataset")
    centered, centering = _center(spec, data)
    obs = spec.observation
    n, p = centered.n, centered.p
    proxy = centered.proxy_means()[centered.group]

    parts = {"beta_0": 1, "beta_x": 1 if not obs.beta_x.is_fixed else 0, "beta_z": p,
             "gamma": n if obs.random_effect is not None else 0}
    layout = _layout(parts, centered.z_names, n_latent=0)
    mean, precision = _latent_prior(layout, spec, centered.z_names, estimated_alpha=[])

    columns = {"beta_0": np.ones((n, 1)), "beta_z": centered.z, "gamma": sparse.identity(n)}
    offset = np.zeros(n)
    if obs.beta_x.is_fixed:
        offset = offset + obs.beta_x.value * proxy
    else:
        columns["beta_x"] = proxy[:, None]
    regression = _regression_block(spec, centered, _place(layout, n, columns), offset)

    theta_names, theta_priors = [], []
    if obs.precision is not None:
        theta_names.append("tau_eps")
        theta_priors.append(obs.precision)
    if obs.random_effect is not None:
        theta_names.append("tau_gamma")
        theta_priors.append(obs.random_effect)
    model = JointModel(
        name=f"{spec.name}-naive",
        family=obs.family,
        error_kind=None,
        blocks=(regression,),
        latent=layout,
        theta_layout=ThetaLayout(tuple(theta_names), tuple(theta_priors)),
        prior_mean=mean,
        prior_precision=precision,
        copy_precision=None,
        data=centered,
        centering=centering,
    )
    logger.info("[MODEL] built %s: latent %d, theta %s", model.name, model.latent_size, theta_names)
    return model


def copy_augment(model: JointModel, tau_copy: float) -> JointModel:
    """Add x_star ~ N(beta_x * x, 1/tau_copy) and let the regression read x_star instead of beta_x * x."""
    if not (tau_copy > 0 and math.isfinite(tau_copy)):
        raise InvalidParameterError(f"copy precision must be positive and finite, got {tau_copy}")
    regression = model.block("regression")
    if model.copy_precision is not None or regression is None or regression.beta_x_design is None:
        raise UnsupportedModelError("copy augmentation needs a latent x entering the regression through beta_x")
    if model.x_conditional is not None:
        raise UnsupportedModelError("the mec and meb formulations are not copy-augmented")
    xs = model.latent.slice("x")
    m = xs.stop - xs.start
    names = [f"x_star[{i}]" for i in range(m)]
    layout = model.latent.insert_after("x", "x_star", names)

    def widen(matrix: sparse.csr_matrix) -> sparse.csr_matrix:
        rows = matrix.shape[0]
        return sparse.hstack(
            [matrix[:, :xs.stop], sparse.csr_matrix((rows, m)), matrix[:, xs.stop:]], format="csr"
        )

    blocks = []
    for block in model.blocks:
        design = widen(block.design)
        if block is regression:
            # the regression reads x_star through the columns that carried beta_x * x
            copy_columns = sparse.hstack(
                [sparse.csr_matrix((block.size, xs.stop)), block.beta_x_design[:, xs],
                 sparse.csr_matrix((block.size, model.latent_size - xs.stop))],
                format="csr",
            )
            blocks.append(replace(block, design=(design + copy_columns).tocsr(), beta_x_design=None))
        else:
            blocks.append(replace(block, design=design))

    def insert(values: np.ndarray) -> np.ndarray:
        return np.concatenate([values[:xs.stop], np.zeros(m), values[xs.stop:]])

    return replace(
        model,
        blocks=tuple(blocks),
        latent=layout,
        prior_mean=_frozen(insert(model.prior_mean)),
        prior_precision=_frozen(insert(model.prior_precision)),
        copy_precision=float(tau_copy),
    )


def _check_structure(spec: ModelSpec, data: Dataset) -> None:
    if data.n == 0:
        raise DataError("empty dataset")
    kind = spec.error.kind
    if kind == "berkson" and data.replicates > 1:
        raise ModelSpecError(f"berkson error takes one proxy column, got {data.replicates}")
    if kind == "classical" and spec.exposure is None:
        raise ModelSpecError("classical error needs an exposure model")
    if kind == "berkson" and spec.exposure is not None:
        raise ModelSpecError("berkson error takes no exposure model")
    if data.z.shape != (data.n, len(spec.observation.covariates)):
        raise ModelSpecError(f"covariate matrix has shape {data.z.shape}, expected ({data.n}, "
                             f"{len(spec.observation.covariates)})")
    n_latent = int(data.group.max()) + 1
    if data.w.shape[1] != n_latent or len(data.weights) != n_latent:
        raise ModelSpecError(
            f"dimension mismatch: {data.w.shape[1]} proxy values and {len(data.weights)} weights "
            f"for {n_latent} latent x elements"
        )
    if kind == "classical" and n_latent != data.n:
        raise ModelSpecError("classical error needs one latent x per row")
    if np.any(data.weights <= 0):
        raise DataError("error weights must be positive")


def _center(spec: ModelSpec, data: Dataset) -> tuple[Dataset, dict[str, float]]:
    if not spec.center:
        return data, {}
    centering = {"w": float(np.nanmean(data.w))}
    z = data.z.copy()
    for j, name in enumerate(data.z_names):
        if len(np.unique(z[:, j])) > 2:
            centering[name] = float(z[:, j].mean())
            z[:, j] -= centering[name]
    return replace(data, w=data.w - centering["w"], z=z), centering


def _layout(parts: dict[str, int], z_names: tuple[str, ...], n_latent: int,
            alpha_names: list[str] | None = None) -> LatentLayout:
    names_for = {
        "beta_0": ["beta_0"],
        "beta_x": ["beta_x"],
        "beta_z": [f"beta_{c}" for c in z_names],
        "alpha_0": ["alpha_0"],
        "alpha_z": [f"alpha_{c}" for c in (alpha_names or [])],
        "x": [f"x[{i}]" for i in range(n_latent)],
        "gamma": [f"gamma[{i}]" for i in range(parts.get("gamma", 0))],
    }
    blocks, names = [], []
    for symbol in LATENT_ORDER:
        length = parts.get(symbol, 0)
        if symbol == "x":
            length = n_latent
        if length:
            blocks.append((symbol, length))
            names.extend(names_for[symbol][:length])
    return LatentLayout(tuple(blocks), tuple(names))


def _latent_prior(layout: LatentLayout, spec: ModelSpec, z_names: tuple[str, ...],
                  estimated_alpha: list[str]) -> tuple[np.ndarray, np.ndarray]:
    obs = spec.observation
    mean = np.zeros(layout.size)
    precision = np.zeros(layout.size)

    def put(symbol: str, priors: list[PriorSpec]) -> None:
        s = layout.slice(symbol)
        mean[s] = [p.mean for p in priors]
        precision[s] = [p.precision for p in priors]

    put("beta_0", [obs.intercept])
    if layout.has("beta_x"):
        put("beta_x", [obs.beta_x])
    put("beta_z", [obs.coefficient_prior(c) for c in z_names])
    if layout.has("alpha_0"):
        put("alpha_0", [spec.exposure.intercept])
    if layout.has("alpha_z"):
        put("alpha_z", [spec.exposure.coefficient_prior(c) for c in estimated_alpha])
    precision[layout.slice("x")] = spec.x_prior_precision
    return _frozen(mean), _frozen(precision)


def _place(layout: LatentLayout, rows: int, parts: dict) -> sparse.csr_matrix:
    """Assemble a design matrix from per-symbol column blocks; unlisted symbols are zero."""
    columns = []
    for symbol, length in layout.blocks:
        part = parts.get(symbol)
        columns.append(sparse.csr_matrix(part) if part is not None else sparse.csr_matrix((rows, length)))
    return sparse.hstack(columns, format="csr")


def _regression_block(spec: ModelSpec, data: Dataset, design: sparse.csr_matrix, offset: np.ndarray,
                      beta_x_design: sparse.csr_matrix | None = None) -> ResponseBlock:
    family = spec.observation.family
    return ResponseBlock(
        role="regression",
        family=family,
        observed=_frozen(data.y),
        design=design,
        offset=_frozen(offset),
        weights=_frozen(np.ones(data.n)),
        precision="tau_eps" if family == "gaussian" else None,
        trials=_frozen(data.trials) if family == "binomial" else None,
        beta_x_design=beta_x_design,
    )


def _assemble(spec: ModelSpec, data: Dataset, centering: dict[str, float]) -> JointModel:
    obs, error = spec.observation, spec.error
    n, p, m = data.n, data.p, data.n_latent
    classical = error.kind == "classical"

    alpha_intercept = classical and not spec.exposure.intercept.is_fixed
    estimated_alpha = [c for c in data.z_names if classical and not spec.exposure.coefficient_prior(c).is_fixed]
    parts = {"beta_0": 1, "beta_z": p, "alpha_0": int(alpha_intercept), "alpha_z": len(estimated_alpha),
             "gamma": n if obs.random_effect is not None else 0}
    layout = _layout(parts, data.z_names, n_latent=m, alpha_names=estimated_alpha)
    mean, precision = _latent_prior(layout, spec, data.z_names, estimated_alpha)

    incidence = sparse.csr_matrix((np.ones(n), (np.arange(n), data.group)), shape=(n, m))
    regression = _regression_block(
        spec, data,
        design=_place(layout, n, {"beta_0": np.ones((n, 1)), "beta_z": data.z, "gamma": sparse.identity(n)}),
        offset=np.zeros(n),
        beta_x_design=_place(layout, n, {"x": incidence}),
    )
    blocks = [regression]

    if classical:
        exposure = spec.exposure
        offset = np.zeros(m)
        if exposure.intercept.is_fixed:
            offset += exposure.intercept.value
        for j, column in enumerate(data.z_names):
            prior = exposure.coefficient_prior(column)
            if prior.is_fixed:
                offset += prior.value * data.z[:, j]
        z_est = data.z[:, [data.z_names.index(c) for c in estimated_alpha]]
        blocks.append(ResponseBlock(
            role="exposure",
            family="gaussian",
            observed=_frozen(np.zeros(m)),
            design=_place(layout, m, {"x": -sparse.identity(m), "alpha_0": np.ones((m, 1)), "alpha_z": z_est}),
            offset=_frozen(offset),
            weights=_frozen(np.ones(m)),
            precision="tau_x",
        ))
        J = data.replicates
        blocks.append(ResponseBlock(
            role="proxy",
            family="gaussian",
            observed=_frozen(data.w.reshape(-1)),
            design=_place(layout, J * m, {"x": sparse.vstack([sparse.identity(m)] * J)}),
            offset=_frozen(np.zeros(J * m)),
            weights=_frozen(np.tile(data.weights, J)),
            precision="tau_u",
        ))
    else:
        blocks.append(ResponseBlock(
            role="proxy",
            family="gaussian",
            observed=_frozen(-data.w[0]),
            design=_place(layout, m, {"x": -sparse.identity(m)}),
            offset=_frozen(np.zeros(m)),
            weights=_frozen(data.weights.copy()),
            precision="tau_u",
        ))

    theta_names = ["beta_x", "tau_u"]
    theta_priors = [obs.beta_x, error.precision]
    if classical:
        theta_names.append("tau_x")
        theta_priors.append(spec.exposure.precision)
    if obs.precision is not None:
        theta_names.append("tau_eps")
        theta_priors.append(obs.precision)
    if obs.random_effect is not None:
        theta_names.append("tau_gamma")
        theta_priors.append(obs.random_effect)

    return JointModel(
        name=spec.name,
        family=obs.family,
        error_kind=error.kind,
        blocks=tuple(blocks),
        latent=layout,
        theta_layout=ThetaLayout(tuple(theta_names), tuple(theta_priors)),
        prior_mean=mean,
        prior_precision=precision,
        copy_precision=None,
        data=data,
        centering=centering,
    )


def _assemble_conditional(spec: ModelSpec, data: Dataset, centering: dict[str, float]) -> JointModel:
    """Regression block only; x takes its law given the proxies (mec or meb)."""
    obs, error = spec.observation, spec.error
    n, p, m = data.n, data.p, data.n_latent
    classical = error.kind == "classical"

    parts = {"beta_0": 1, "beta_z": p, "gamma": n if obs.random_effect is not None else 0}
    layout = _layout(parts, data.z_names, n_latent=m)
    mean, precision = _latent_prior(layout, spec, data.z_names, estimated_alpha=[])
    precision = np.array(precision)
    precision[layout.slice("x")] = 0.0

    offset = np.zeros(m)
    if classical:
        for j, column in enumerate(data.z_names):
            offset += spec.exposure.coefficient_prior(column).value * data.z[:, j]
    elif spec.x_prior_precision == 0 and np.any(np.isnan(data.w[0])):
        raise ModelSpecError("meb formulation with absent proxies needs a positive x_prior_precision")
    conditional = ProxyConditional.from_proxies(error.kind, data.w, data.weights, offset, spec.x_prior_precision)

    incidence = sparse.csr_matrix((np.ones(n), (np.arange(n), data.group)), shape=(n, m))
    regression = _regression_block(
        spec, data,
        design=_place(layout, n, {"beta_0": np.ones((n, 1)), "beta_z": data.z, "gamma": sparse.identity(n)}),
        offset=np.zeros(n),
        beta_x_design=_place(layout, n, {"x": incidence}),
    )

    theta_names = ["beta_x", "tau_u"]
    theta_priors = [obs.beta_x, error.precision]
    if classical:
        theta_names += ["tau_x", "alpha_0"]
        theta_priors += [spec.exposure.precision, spec.exposure.intercept]
    if obs.precision is not None:
        theta_names.append("tau_eps")
        theta_priors.append(obs.precision)
    if obs.random_effect is not None:
        theta_names.append("tau_gamma")
        theta_priors.append(obs.random_effect)

    return JointModel(
        name=spec.name,
        family=obs.family,
        error_kind=error.kind,
        blocks=(regression,),
        latent=layout,
        theta_layout=ThetaLayout(tuple(theta_names), tuple(theta_priors)),
        prior_mean=mean,
        prior_precision=_frozen(precision),
        copy_precision=None,
        data=data,
        centering=centering,
        x_conditional=conditional,
    )


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=float)
    out.setflags(write=False)
    return out
