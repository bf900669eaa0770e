"""Synthetic data generators for every model family."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import epimodels as epi
from .gp import GaussianDist, sample_gaussian
from .kernels import Structure, TimeGrid, gram, variant_structure


@dataclass
class GaussianSample:
    y: np.ndarray  # (p, n) observations
    x: np.ndarray  # (p, n) task latents
    m: np.ndarray | None  # (n,) shared mean process


def simulate_latent(
    variant: str, params: dict, p: int, times, rng, size: int | None = None
) -> tuple[np.ndarray, np.ndarray | None]:
    """Two-step draw: mean process M, then task paths ``X_i = M + D_i``.

    With ``size`` the draws are batched, giving X of shape (size, p, n) and
    M of shape (size, n).
    """
    rng = np.random.default_rng(rng)
    struct = variant_structure(variant, params, p)
    grid = TimeGrid(np.asarray(times, dtype=float))
    n = grid.n
    count = 1 if size is None else int(size)
    m = None
    x = np.zeros((count, p, n))
    if struct.kind is not Structure.INDEPENDENT:
        cov = struct.sigma_mu**2 * gram(struct.mean_kernel, grid)
        m = sample_gaussian(GaussianDist(np.zeros(n), cov), count, rng)
        x += m[:, None, :]
    for i in range(p):
        cov = struct.task_sigma(i) ** 2 * gram(struct.task_kernel_for(i), grid)
        x[:, i] += sample_gaussian(GaussianDist(np.zeros(n), cov), count, rng)
    if size is None:
        return x[0], None if m is None else m[0]
    return x, m


def simulate_gaussian(variant: str, params: dict, p: int, times, sigma_y: float, seed=0) -> GaussianSample:
    rng = np.random.default_rng(seed)
    x, m = simulate_latent(variant, params, p, times, rng)
    y = x + sigma_y * rng.standard_normal(x.shape)
    return GaussianSample(y, x, m)


@dataclass
class EpidemicSample:
    counts: np.ndarray  # observed counts (tasks, T)
    x: np.ndarray  # latent transmission on the GP grid
    beta: np.ndarray
    expected: np.ndarray
    infections: np.ndarray | None = None


def simulate_chikv(
    variant: str,
    params: dict,
    config: epi.ChikvConfig,
    T: int,
    x0,
    log_beta_p,
    phi: float,
    seed=0,
) -> EpidemicSample:
    """Weekly incidence from the TSIR model.

    For ``variant == "baseline"`` ``params`` holds ``b`` (island effects)
    and ``x0`` is ignored. The first week's exposure is
    ``config.initial_exposure`` (required).
    """
    if config.initial_exposure is None:
        raise ValueError("simulation needs config.initial_exposure")
    rng = np.random.default_rng(seed)
    S = config.S
    if variant == "baseline":
        x = np.repeat(np.asarray(params["b"], dtype=float).reshape(S, 1), T, axis=1)
    else:
        gp, _ = simulate_latent(variant, params, S, np.arange(1, T + 1), rng)
        x = np.asarray(x0, dtype=float).reshape(S, 1) + gp
    beta = np.exp(x + epi.precipitation_lags(config, T) @ np.asarray(log_beta_p, dtype=float))
    counts = np.zeros((S, T))
    expected = np.zeros((S, T))
    prev = config.initial_exposure.copy()
    cum = np.zeros(S)
    for t in range(T):
        z = np.clip(1.0 - cum / config.populations, 0.0, 1.0)
        expected[:, t] = beta[:, t] * (prev + config.exposure_offset) * z
        counts[:, t] = np.minimum(epi.negbin_sample(expected[:, t], phi, rng), config.populations - cum)
        prev = counts[:, t]
        cum = cum + counts[:, t]
    return EpidemicSample(counts, x, beta, expected)


def simulate_covid(
    variant: str,
    params: dict,
    config: epi.RenewalConfig,
    T: int,
    x0,
    seed_level: float,
    phi: float,
    seed=0,
) -> EpidemicSample:
    """Daily deaths per age group from the renewal model."""
    rng = np.random.default_rng(seed)
    K = epi.n_changepoints(T, config.changepoint_stride)
    gp, _ = simulate_latent(variant, params, config.A, np.arange(1, K + 1), rng)
    x = np.asarray(x0, dtype=float).reshape(config.A, 1) + gp
    beta = special.expit(epi.expand_changepoints(x, config.changepoint_stride, T))
    inf = epi.renewal_infections(beta, config, seed=seed_level)
    d = epi.expected_deaths(inf, config)
    return EpidemicSample(epi.negbin_sample(d, phi, rng), x, beta, d, inf)
