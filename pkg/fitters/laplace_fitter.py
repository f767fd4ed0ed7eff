import logging
import time

from dataset import Dataset
from engine.config import ModelSpec
from engine.inla import DEFAULT_DIFF_LOGDENS, DEFAULT_DZ, explore_grid, hyper_marginal, latent_marginal
from engine.model import JointModel, build_joint_model
from report_utils import ParameterSummary, PosteriorReport

logger = logging.getLogger(__name__)

REPORTED_LATENT = ("beta_0", "beta_x", "beta_z", "alpha_0", "alpha_z")


class LaplaceFitter:
    """Nested Laplace fit of the measurement error model.

    Grid settings left as None come from the model config's grid section,
    then from the engine defaults.
    """

    method = "laplace"

    def __init__(self, dz: float | None = None, diff_logdens: float | None = None, workers: int = 1,
                 monitor_x: tuple[int, ...] = (0, 1, 2, 3)):
        self.dz = dz
        self.diff_logdens = diff_logdens
        self.workers = workers
        self.monitor_x = monitor_x
        self.model: JointModel | None = None

    def build(self, spec: ModelSpec, data: Dataset) -> JointModel:
        return build_joint_model(spec, data)

    def grid_settings(self, spec: ModelSpec) -> tuple[float, float]:
        dz = self.dz or spec.grid.dz or DEFAULT_DZ
        diff_logdens = self.diff_logdens or spec.grid.diff_logdens or DEFAULT_DIFF_LOGDENS
        return dz, diff_logdens

    def reported_latent(self, model: JointModel) -> list[str]:
        names = []
        for symbol in REPORTED_LATENT:
            s = model.latent.slice(symbol)
            names.extend(model.latent.names[s])
        if model.latent.has("x"):
            size = model.latent.slice("x").stop - model.latent.slice("x").start
            names.extend(f"x[{i}]" for i in self.monitor_x if 0 <= i < size)
        return names

    def run(self, spec: ModelSpec, data: Dataset) -> PosteriorReport:
        started = time.perf_counter()
        model = self.model = self.build(spec, data)
        dz, diff_logdens = self.grid_settings(spec)
        logger.info("[LAPLACE] %s: exploring hyperparameters %s (dz %g, diff_logdens %g)",
                    model.name, model.theta_layout.free_names, dz, diff_logdens)
        grid = explore_grid(model, dz=dz, diff_logdens=diff_logdens, workers=self.workers)

        marginals = {name: latent_marginal(model, grid, name) for name in self.reported_latent(model)}
        for name in grid.names:
            marginals[name] = hyper_marginal(grid, name)
        summaries = [ParameterSummary.from_marginal(name, self.method, m) for name, m in marginals.items()]
        elapsed = time.perf_counter() - started
        logger.info("[LAPLACE] %s: %d grid points, %d parameters in %.2fs",
                    model.name, len(grid.points), len(summaries), elapsed)
        return PosteriorReport(
            method=self.method,
            summaries=summaries,
            marginals=marginals,
            centering=model.centering,
            wall_clock_seconds=elapsed,
        )
