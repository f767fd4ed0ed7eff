# 📁 File: main.py

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from dataset import load_dataset
from engine.config import ModelSpec
from engine.elicit import (
    QuantileTarget,
    berkson_sigma_from_interval,
    gamma_from_mean_equal_variance,
    gamma_from_quantiles,
    lognormal_from_quantiles,
    precision_from_uniform_range,
)
from engine.errors import ConfigError, MeasurementErrorModelError
from engine.inla import DEFAULT_DIFF_LOGDENS, DEFAULT_DZ
from engine.mcmc import ChainConfig
from fitters import LaplaceFitter, McmcFitter, NaiveFitter
from report_utils import COMPARISON_FILE, comparison_table, read_summary, write_comparison, write_report
from studygen import DEFAULT_TRUTH, GroundTruth, StudyRecipe, simulate, write_study
from utils.log import configure_logging
from utils.settings import MEC_OUTPUT_DIR, worker_count

logger = logging.getLogger(__name__)

METHOD_ORDER = ("naive", "laplace", "mcmc")


class UsageError(MeasurementErrorModelError):
    pass


class CliParser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so usage errors share the exit-code mapping."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


# 🧾 Run schema
class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model_path: Path
    data_path: Path
    method: Literal["naive", "laplace", "mcmc", "all"] = "all"
    out_dir: Path = Path(MEC_OUTPUT_DIR)
    dz: float | None = Field(default=None, gt=0)
    diff_logdens: float | None = Field(default=None, gt=0)
    workers: int | None = Field(default=None, ge=1)
    iterations: int = 100_000
    burn_in: int = 10_000
    thin: int = 10
    seed: int | None = None
    chains: int = 1
    monitor_x: tuple[int, ...] = (0, 1, 2, 3)
    truth_path: Path | None = None

    @model_validator(mode="after")
    def _check_method_options(self):
        if self.method in ("mcmc", "all") and self.seed is None:
            raise ValueError(f"method {self.method} needs --seed")
        return self

    @property
    def methods(self) -> tuple[str, ...]:
        return METHOD_ORDER if self.method == "all" else (self.method,)

    def chain_config(self) -> ChainConfig:
        return ChainConfig(iterations=self.iterations, burn_in=self.burn_in, thin=self.thin, seed=self.seed,
                           monitor_x=self.monitor_x, chains=self.chains)


def _load_truth(path: Path | None) -> dict[str, float] | None:
    if path is None:
        return None
    try:
        return GroundTruth.from_json(Path(path).read_text(encoding="utf-8")).parameters
    except FileNotFoundError as e:
        raise ConfigError(f"truth file not found: {path}") from e
    except (KeyError, ValueError) as e:
        raise ConfigError(f"malformed truth file {path}: {e}") from e


def _fitter(method: str, cfg: RunConfig):
    workers = worker_count(cfg.workers)
    if method == "naive":
        return NaiveFitter(cfg.dz, cfg.diff_logdens, workers, cfg.monitor_x)
    if method == "laplace":
        return LaplaceFitter(cfg.dz, cfg.diff_logdens, workers, cfg.monitor_x)
    return McmcFitter(cfg.chain_config(), workers)


# 🧠 Fit pipeline
def run_fit(cfg: RunConfig) -> dict[str, Path]:
    """Run each requested method and write its report.

    Reports of methods that finished stay on disk when a later method fails;
    the error is re-raised afterwards.
    """
    spec = ModelSpec.from_yaml(cfg.model_path)
    data = load_dataset(cfg.data_path, spec)
    truth = _load_truth(cfg.truth_path)
    if "mcmc" in cfg.methods:
        cfg.chain_config()

    written: dict[str, Path] = {}
    summaries = []
    for method in cfg.methods:
        logger.info("[FIT] running %s on %s", method, cfg.data_path)
        report = _fitter(method, cfg).run(spec, data)
        written[method] = write_report(report, cfg.out_dir)
        summaries.append(report.summaries)

    if len(cfg.methods) > 1 or truth is not None:
        table = comparison_table(summaries, truth)
        written["comparison"] = write_comparison(table, cfg.out_dir / COMPARISON_FILE)
    return written


# 🎲 Simulation
def run_simulate(args: argparse.Namespace) -> tuple[Path, Path]:
    parameters = {}
    for item in args.param or []:
        name, _, value = item.partition("=")
        if not value:
            raise UsageError(f"--param takes NAME=VALUE, got {item!r}")
        try:
            parameters[name] = float(value)
        except ValueError:
            raise UsageError(f"--param {name}: not a number: {value!r}") from None
    fields = {"study": args.study, "seed": args.seed, "n": args.n, "parameters": parameters}
    for name in ("conditions", "houses", "levels"):
        if getattr(args, name) is not None:
            fields[name] = getattr(args, name)
    recipe = StudyRecipe(**fields)
    frame, truth = simulate(recipe)
    return write_study(frame, truth, args.out, args.stem or args.study)


# 🎯 Elicitation
def run_elicit(args: argparse.Namespace) -> dict[str, float]:
    if args.target in ("gamma", "lognormal"):
        target = QuantileTarget(p_lo=args.p[0], q_lo=args.q[0], p_hi=args.p[1], q_hi=args.q[1])
        if args.target == "gamma":
            return gamma_from_quantiles(target)._asdict()
        return lognormal_from_quantiles(target)._asdict()
    if args.target == "uniform-precision":
        return {"precision": precision_from_uniform_range(args.width)}
    if args.target == "berkson-precision":
        return {"precision": berkson_sigma_from_interval(args.interval, args.z)}
    return gamma_from_mean_equal_variance(args.mean)._asdict()


# 📊 Comparison of existing reports
def run_compare(args: argparse.Namespace) -> Path:
    summaries = [read_summary(path) for path in args.reports]
    table = comparison_table(summaries, _load_truth(args.truth))
    return write_comparison(table, args.out)


def build_parser() -> CliParser:
    parser = CliParser(prog="mecfit", description="Bayesian measurement error models: fit, simulate, elicit, compare.")
    parser.add_argument("--log-level", default=None, help="log level (default from MEC_LOG_LEVEL)")
    commands = parser.add_subparsers(dest="command", required=True)

    fit = commands.add_parser("fit", help="fit a model config to a dataset")
    fit.add_argument("--config", required=True, type=Path, help="model config (YAML)")
    fit.add_argument("--data", required=True, type=Path, help="dataset (CSV, NA marks absent values)")
    fit.add_argument("--method", choices=("naive", "laplace", "mcmc", "all"), default="all")
    fit.add_argument("--out", type=Path, default=Path(MEC_OUTPUT_DIR))
    fit.add_argument("--dz", type=float, default=None,
                     help=f"grid step in standardized units (default: model config, then {DEFAULT_DZ})")
    fit.add_argument("--diff-logdens", type=float, default=None,
                     help=f"log-density cutoff (default: model config, then {DEFAULT_DIFF_LOGDENS})")
    fit.add_argument("--workers", type=int, default=None)
    fit.add_argument("--iterations", type=int, default=100_000)
    fit.add_argument("--burn-in", type=int, default=10_000)
    fit.add_argument("--thin", type=int, default=10)
    fit.add_argument("--seed", type=int, default=None)
    fit.add_argument("--chains", type=int, default=1)
    fit.add_argument("--monitor-x", type=int, nargs="+", default=[0, 1, 2, 3])
    fit.add_argument("--truth", type=Path, default=None, help="ground-truth JSON written by simulate")

    sim = commands.add_parser("simulate", help="simulate a synthetic study")
    sim.add_argument("--study", required=True, choices=tuple(DEFAULT_TRUTH))
    sim.add_argument("--seed", required=True, type=int)
    sim.add_argument("--n", type=int, default=None)
    sim.add_argument("--conditions", type=int, default=None)
    sim.add_argument("--houses", type=int, default=None)
    sim.add_argument("--levels", type=int, default=None)
    sim.add_argument("--param", action="append", metavar="NAME=VALUE", help="override a true parameter")
    sim.add_argument("--out", type=Path, default=Path(MEC_OUTPUT_DIR))
    sim.add_argument("--stem", default=None, help="file stem (default: the study name)")

    elicit = commands.add_parser("elicit", help="prior parameters from expert statements")
    targets = elicit.add_subparsers(dest="target", required=True)
    for name in ("gamma", "lognormal"):
        quantiles = targets.add_parser(name)
        quantiles.add_argument("--q", type=float, nargs=2, required=True, metavar=("LO", "HI"))
        quantiles.add_argument("--p", type=float, nargs=2, default=[0.025, 0.975], metavar=("P_LO", "P_HI"))
    targets.add_parser("uniform-precision").add_argument("--width", type=float, required=True)
    berkson = targets.add_parser("berkson-precision")
    berkson.add_argument("--interval", type=float, required=True)
    berkson.add_argument("--z", type=float, default=1.96)
    targets.add_parser("equal-moments").add_argument("--mean", type=float, required=True)

    compare = commands.add_parser("compare", help="side-by-side table of existing reports")
    compare.add_argument("reports", nargs="+", type=Path, help="report directories or summary.json files")
    compare.add_argument("--out", type=Path, required=True)
    compare.add_argument("--truth", type=Path, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        configure_logging(args.log_level)
        if args.command == "fit":
            cfg = RunConfig(
                model_path=args.config, data_path=args.data, method=args.method, out_dir=args.out, dz=args.dz,
                diff_logdens=args.diff_logdens, workers=args.workers, iterations=args.iterations,
                burn_in=args.burn_in, thin=args.thin, seed=args.seed, chains=args.chains,
                monitor_x=tuple(args.monitor_x), truth_path=args.truth,
            )
            for name, path in run_fit(cfg).items():
                print(f"{name}: {path}")
        elif args.command == "simulate":
            for path in run_simulate(args):
                print(path)
        elif args.command == "elicit":
            print(json.dumps(run_elicit(args)))
        else:
            print(run_compare(args))
    except MeasurementErrorModelError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return e.exit_code
    except (ValidationError, ValueError) as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return 1
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
