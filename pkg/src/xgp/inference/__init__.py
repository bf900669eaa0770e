from .diagnostics import diagnostics, ess, split_rhat
from .hmc import PosteriorDraws, SamplerConfig, SamplerError, hmc_sample
from .latents import reconstruct_latents
from .model import ChikvData, CovidData, GaussianData, Likelihood, ModelSpec, Posterior, log_posterior
from .optimize import OptimResult, optimize_marginal
from .priors import PriorSet

__all__ = [
    "ChikvData",
    "CovidData",
    "GaussianData",
    "Likelihood",
    "ModelSpec",
    "OptimResult",
    "Posterior",
    "PosteriorDraws",
    "PriorSet",
    "SamplerConfig",
    "SamplerError",
    "diagnostics",
    "ess",
    "hmc_sample",
    "log_posterior",
    "optimize_marginal",
    "reconstruct_latents",
    "split_rhat",
]
