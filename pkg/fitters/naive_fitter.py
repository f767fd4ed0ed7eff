import logging

from dataset import Dataset
from engine.closed_forms import naive_glm_fit
from engine.config import ModelSpec
from engine.errors import NumericalError
from engine.model import JointModel, build_naive_model
from fitters.laplace_fitter import LaplaceFitter
from report_utils import PosteriorReport

logger = logging.getLogger(__name__)


class NaiveFitter(LaplaceFitter):
    """Bayesian fit that treats the proxy as the true covariate, plus the ML fit for reference."""

    method = "naive"

    def build(self, spec: ModelSpec, data: Dataset) -> JointModel:
        return build_naive_model(spec, data)

    def run(self, spec: ModelSpec, data: Dataset) -> PosteriorReport:
        report = super().run(spec, data)
        model_data = self.model.data
        try:
            fit = naive_glm_fit(model_data.y, model_data.proxy_means()[model_data.group], model_data.z,
                                spec.observation.family, model_data.trials, names=model_data.z_names)
        except NumericalError as e:
            logger.warning("[FIT] maximum-likelihood naive fit unavailable: %s", e)
            return report
        report.ml_estimates = {
            name: {"estimate": float(coef), "se": float(se)} for name, coef, se in zip(fit.names, fit.coef, fit.se)
        }
        return report
