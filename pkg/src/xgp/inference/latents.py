"""Post-hoc latent draws for the marginalized linear-Gaussian model."""

from __future__ import annotations

import dataclasses

import numpy as np

from .._linalg import NumericalError
from ..gp import ObservationNoise, posterior_m, posterior_x, sample_gaussian
from ..kernels import Structure
from .hmc import PosteriorDraws
from .model import GaussianData, Likelihood, ModelSpec, Posterior


def reconstruct_latents(draws: PosteriorDraws, model: ModelSpec, data: GaussianData, seed=0) -> PosteriorDraws:
    """Draw task latents X | Y, theta and then the mean process M | X, theta per draw.

    Draws whose factorizations fail are skipped (NaN rows) and counted in
    ``latent_draws["failures"]``.
    """
    if model.likelihood is not Likelihood.GAUSSIAN:
        raise ValueError("latent reconstruction applies to the gaussian likelihood")
    post = Posterior(ModelSpec(model.variant, model.likelihood, model.priors, marginalize=True), data)
    rng = np.random.default_rng(seed)
    p, n = data.p, data.grid.n
    xs = np.full((draws.n_draws, p, n), np.nan)
    ms = np.full((draws.n_draws, n), np.nan)
    failures = 0
    for k, state in enumerate(draws.states):
        vals = post.layout.constrain(state[: post.dim])
        struct = post.structure(vals)
        noise = ObservationNoise(float(vals["sigma_y"][0]))
        try:
            dist_x = posterior_x(data.y.ravel(), struct, data.grid, p, noise)
            x = sample_gaussian(dist_x, 1, rng)[0].reshape(p, n)
            xs[k] = x
            if struct.kind is not Structure.INDEPENDENT:
                ms[k] = sample_gaussian(posterior_m(x, struct, data.grid, p), 1, rng)[0]
        except (NumericalError, np.linalg.LinAlgError):
            failures += 1
    latent = {"x": xs, "failures": np.array(failures)}
    if post.structure(post.layout.constrain(draws.states[0][: post.dim])).kind is not Structure.INDEPENDENT:
        latent["m"] = ms
    return dataclasses.replace(draws, latent_draws=latent)
