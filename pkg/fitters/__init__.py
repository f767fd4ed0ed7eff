from fitters.laplace_fitter import LaplaceFitter
from fitters.mcmc_fitter import McmcFitter
from fitters.naive_fitter import NaiveFitter

FITTERS = {"naive": NaiveFitter, "laplace": LaplaceFitter, "mcmc": McmcFitter}
