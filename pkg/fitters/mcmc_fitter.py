import logging
import time

import numpy as np

from dataset import Dataset
from engine.config import ModelSpec
from engine.mcmc import ChainConfig, pooled_draws, run_chains, summarize_draws
from engine.model import build_joint_model
from report_utils import ParameterSummary, PosteriorReport

logger = logging.getLogger(__name__)


def stacked_spec(spec: ModelSpec) -> ModelSpec:
    """The same model in the copy formulation; mec and meb only change how the approximation sees x."""
    if spec.error.formulation == "copy":
        return spec
    return spec.model_copy(update={"error": spec.error.model_copy(update={"formulation": "copy"})})


class McmcFitter:
    method = "mcmc"

    def __init__(self, cfg: ChainConfig, workers: int = 1):
        self.cfg = cfg
        self.workers = workers

    def run(self, spec: ModelSpec, data: Dataset) -> PosteriorReport:
        started = time.perf_counter()
        model = build_joint_model(stacked_spec(spec), data)
        logger.info("[MCMC] %s: %d chain(s) of %d iterations, seed %d",
                    model.name, self.cfg.chains, self.cfg.iterations, self.cfg.seed)
        outputs = run_chains(model, self.cfg, workers=self.workers)
        draws = pooled_draws(outputs)
        stats = summarize_draws(draws)
        summaries = [
            ParameterSummary(parameter=name, method=self.method, mean=s.mean, sd=s.sd, q025=s.q025, q50=s.q50,
                             q975=s.q975)
            for name, s in stats.items()
        ]
        blocks = outputs[0].acceptance_rates.keys()
        acceptance = {block: float(np.mean([o.acceptance_rates[block] for o in outputs])) for block in blocks}
        elapsed = time.perf_counter() - started
        logger.info("[MCMC] %s: %d pooled draws in %.2fs", model.name, len(draws), elapsed)
        return PosteriorReport(
            method=self.method,
            summaries=summaries,
            centering=model.centering,
            acceptance_rates=acceptance,
            effective_sample_size={name: s.ess for name, s in stats.items()},
            draws=draws,
            wall_clock_seconds=elapsed,
        )
