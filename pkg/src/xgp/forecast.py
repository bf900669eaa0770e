"""Predictive ensembles from posterior draws.

Linear-Gaussian models forecast through the closed-form predictive
distribution, one Gaussian per retained parameter draw. Epidemic models
extend each draw's latent GP path by conditioning on its fitted values and
then simulate counts forward with the observation model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import epimodels as epi
from .gp import ObservationNoise, condition, predict_points, sample_gaussian
from .kernels import CovStructure, cross_cov
from .inference.hmc import PosteriorDraws
from .inference.model import ChikvData, CovidData, GaussianData, Likelihood, ModelSpec, Posterior

QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)


class ForecastError(ValueError):
    pass


@dataclass
class Forecast:
    """Ensemble of predictive samples for a list of (task, time) cells."""

    tasks: np.ndarray
    times: np.ndarray
    samples: np.ndarray  # (ensemble, cells)
    mean: np.ndarray | None = None  # closed-form mixture mean when available

    def __post_init__(self):
        self.tasks = np.asarray(self.tasks, dtype=int)
        self.times = np.asarray(self.times, dtype=float)
        samples = np.asarray(self.samples, dtype=float)
        n = samples.shape[0] if samples.ndim else 1
        # an empty cell list cannot infer the ensemble size from -1
        self.samples = samples.reshape(n if self.tasks.size == 0 else -1, self.tasks.size)

    @property
    def n_cells(self) -> int:
        return self.tasks.size

    def quantiles(self, probs=QUANTILES) -> np.ndarray:
        """Array (len(probs), cells); empty when there are no cells."""
        if self.n_cells == 0:
            return np.zeros((len(probs), 0))
        return np.quantile(self.samples, probs, axis=0)


def _thin_indices(n: int, max_draws: int | None) -> np.ndarray:
    if max_draws is None or max_draws >= n:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, max_draws).round().astype(int))


def _param_posterior(model: ModelSpec, data) -> Posterior:
    """Posterior whose leading block layout matches any draw of ``model``."""
    if model.likelihood is Likelihood.GAUSSIAN:
        model = ModelSpec(model.variant, model.likelihood, model.priors, marginalize=True)
    return Posterior(model, data)


# ---------------------------------------------------------------------------
# Linear-Gaussian


def gaussian_forecast(
    draws: PosteriorDraws,
    model: ModelSpec,
    data: GaussianData,
    star_tasks,
    star_times,
    per_draw: int = 1,
    seed=0,
    include_obs_noise: bool = True,
    max_draws: int | None = None,
) -> Forecast:
    """Mixture-of-Gaussians predictive ensemble at the requested cells."""
    star_tasks = np.asarray(star_tasks, dtype=int).ravel()
    star_times = np.asarray(star_times, dtype=float).ravel()
    post = _param_posterior(model, data)
    obs = ~np.isnan(data.y)
    tasks = np.repeat(np.arange(data.p), data.grid.n)[obs.ravel()]
    times = np.tile(data.grid.times, data.p)[obs.ravel()]
    y_obs = data.y.ravel()[obs.ravel()]
    rng = np.random.default_rng(seed)
    idx = _thin_indices(draws.n_draws, max_draws)
    if star_tasks.size == 0:
        return Forecast(star_tasks, star_times, np.zeros((idx.size * per_draw, 0)), np.zeros(0))
    samples, means = [], []
    for k in idx:
        vals = post.layout.constrain(draws.states[k][: post.dim])
        struct = post.structure(vals)
        noise = ObservationNoise(float(vals["sigma_y"][0]))
        dist = predict_points(star_tasks, star_times, tasks, times, y_obs, struct, noise, include_obs_noise)
        means.append(dist.mean)
        samples.append(sample_gaussian(dist, per_draw, rng))
    return Forecast(star_tasks, star_times, np.concatenate(samples), np.mean(means, axis=0))


# ---------------------------------------------------------------------------
# Latent path extension


def extend_latent(struct: CovStructure, times_past, x_past, times_future, rng) -> np.ndarray:
    """Draw future GP values given the noise-free past path of every task.

    ``x_past`` has shape (p, n_past); returns (p, n_future).
    """
    x_past = np.atleast_2d(np.asarray(x_past, dtype=float))
    p = x_past.shape[0]
    tp = np.asarray(times_past, dtype=float)
    tf = np.asarray(times_future, dtype=float)
    if tf.size == 0:
        return np.zeros((p, 0))
    ta, tb = np.repeat(np.arange(p), tp.size), np.tile(tp, p)
    fa, fb = np.repeat(np.arange(p), tf.size), np.tile(tf, p)
    k_oo = cross_cov(struct, ta, tb, ta, tb)
    k_so = cross_cov(struct, fa, fb, ta, tb)
    k_ss = cross_cov(struct, fa, fb, fa, fb)
    # a small nugget keeps smooth kernels conditionable
    nugget = 1e-8 * max(float(np.mean(np.diag(k_oo))), 1e-12)
    dist = condition(k_oo + nugget * np.eye(tb.size), k_so, k_ss, x_past.ravel())
    return sample_gaussian(dist, 1, rng)[0].reshape(p, tf.size)


# ---------------------------------------------------------------------------
# Chikungunya


def chikv_forecast(
    draws: PosteriorDraws,
    model: ModelSpec,
    data: ChikvData,
    horizon: int,
    seed=0,
    config: epi.ChikvConfig | None = None,
    max_draws: int | None = None,
) -> Forecast:
    """Simulated weekly incidence for weeks T+1..T+horizon.

    ``config`` (default: the training config) must carry precipitation for
    the forecast weeks.
    """
    config = data.config if config is None else config
    T = data.T
    if horizon < 0:
        raise ForecastError("horizon must be nonnegative")
    if T + horizon > config.T:
        raise ForecastError(
            f"horizon beyond covariate availability: precipitation covers {config.T} weeks, "
            f"forecasting to week {T + horizon} needs future precipitation"
        )
    post = Posterior(model, data)
    lags = epi.precipitation_lags(config, T + horizon)[:, T:]
    rng = np.random.default_rng(seed)
    idx = _thin_indices(draws.n_draws, max_draws)
    S = data.config.S
    out = np.zeros((idx.size, S, horizon))
    t_past = post.times
    t_future = np.arange(T + 1, T + horizon + 1, dtype=float)
    for r, k in enumerate(idx):
        u = draws.states[k]
        vals = post.layout.constrain(u)
        x = post.latent_summary(u)["x"]
        if model.variant == "baseline":
            x_f = np.repeat(x[:, -1:], horizon, axis=1)
        else:
            gp_past = x - vals["x0"][:, None]
            x_f = vals["x0"][:, None] + extend_latent(post.structure(vals), t_past, gp_past, t_future, rng)
        beta = np.exp(x_f + lags @ vals["log_beta_P"])
        phi = float(vals["phi_O"][0])
        obs = data.observed
        prev = obs[:, -1].copy()
        cum = obs.sum(axis=1)
        for h in range(horizon):
            z = np.clip(1.0 - cum / config.populations, 0.0, 1.0)
            d = beta[:, h] * (prev + config.exposure_offset) * z
            y = epi.negbin_sample(d, phi, rng)
            out[r, :, h] = y
            prev = y
            cum = cum + y
    tasks = np.repeat(np.arange(S), horizon)
    times = np.tile(t_future, S)
    return Forecast(tasks, times, out.reshape(idx.size, -1))


# ---------------------------------------------------------------------------
# COVID renewal


def covid_forecast(
    draws: PosteriorDraws,
    model: ModelSpec,
    data: CovidData,
    horizon: int,
    seed=0,
    max_draws: int | None = None,
) -> Forecast:
    """Simulated daily deaths per age group for days T+1..T+horizon."""
    if horizon < 0:
        raise ForecastError("horizon must be nonnegative")
    cfg = data.config
    post = Posterior(model, data)
    T, K = data.T, data.K
    k_full = epi.n_changepoints(T + horizon, cfg.changepoint_stride)
    t_future = np.arange(K + 1, k_full + 1, dtype=float)
    rng = np.random.default_rng(seed)
    idx = _thin_indices(draws.n_draws, max_draws)
    out = np.zeros((idx.size, cfg.A, horizon))
    for r, k in enumerate(idx):
        u = draws.states[k]
        vals = post.layout.constrain(u)
        x = post.latent_summary(u)["x"]
        gp_past = x - vals["x0"][:, None]
        x_f = vals["x0"][:, None] + extend_latent(post.structure(vals), post.times, gp_past, t_future, rng)
        daily = epi.expand_changepoints(np.concatenate([x, x_f], axis=1), cfg.changepoint_stride, T + horizon)
        inf = epi.renewal_infections(special.expit(daily), cfg, seed=float(vals["seed"][0]))
        d = epi.expected_deaths(inf, cfg)[:, T:]
        out[r] = epi.negbin_sample(d, float(vals["phi_D"][0]), rng)
    tasks = np.repeat(np.arange(cfg.A), horizon)
    times = np.tile(np.arange(T + 1, T + horizon + 1, dtype=float), cfg.A)
    return Forecast(tasks, times, out.reshape(idx.size, -1))
