"""Forward maps from latent transmission paths to expected surveillance counts.

Two models:

* a weekly TSIR model with lagged precipitation covariates, where
  ``log beta = x + sum_l P[t-l] * log beta_P[l]`` and expected incidence is
  ``beta * exposure * susceptible_fraction``;
* a daily age-structured renewal model with a contact matrix, a discretized
  generation-time distribution, logit-linked transmission and expected deaths
  through an infection-to-death delay and age-specific IFR.

Counts are linked to expectations by a negative binomial with mean ``d`` and
size ``d / phi`` (variance ``d * (1 + phi)``).

Several functions come in value / adjoint pairs; the adjoints take the
gradient of a scalar with respect to the output and return gradients with
respect to the inputs. They back the hand-written log-posterior gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

N_LAGS = 9  # precipitation lags l = 0..8
SEED_DAYS = 6


# ---------------------------------------------------------------------------
# Chikungunya TSIR


@dataclass
class ChikvConfig:
    """Island populations and weekly precipitation.

    ``precipitation`` has shape (S, T + 8): the first 8 columns are the weeks
    before week 1. ``initial_exposure`` is the incidence of the week before
    week 1 (defaults to week-1 incidence). ``exposure_offset`` is added to
    the exposure term; 0 keeps the pure lag-one TSIR form.
    """

    populations: np.ndarray
    precipitation: np.ndarray
    initial_exposure: np.ndarray | None = None
    exposure_offset: float = 0.0

    def __post_init__(self):
        self.populations = np.atleast_1d(np.asarray(self.populations, dtype=float))
        self.precipitation = np.atleast_2d(np.asarray(self.precipitation, dtype=float))
        if np.any(self.populations <= 0):
            raise ValueError("populations must be positive")
        if self.precipitation.shape[0] != self.populations.size:
            raise ValueError("precipitation rows must match the number of islands")
        if self.precipitation.shape[1] < N_LAGS - 1:
            raise ValueError("precipitation needs at least 8 weeks of history before week 1")
        if self.initial_exposure is not None:
            self.initial_exposure = np.asarray(self.initial_exposure, dtype=float).reshape(self.S)

    @property
    def S(self) -> int:
        return self.populations.size

    @property
    def T(self) -> int:
        """Number of weeks with covariate coverage."""
        return self.precipitation.shape[1] - (N_LAGS - 1)


def precipitation_lags(config: ChikvConfig, T: int) -> np.ndarray:
    """Array of shape (S, T, 9) with entry [s, t, l] = P[s, week t - l]."""
    if T > config.T:
        raise ValueError(f"precipitation covers {config.T} weeks but {T} were requested")
    p = config.precipitation
    h = N_LAGS - 1
    return np.stack([p[:, h - l : h - l + T] for l in range(N_LAGS)], axis=-1)


def chikv_log_beta(x, config: ChikvConfig, log_beta_p) -> np.ndarray:
    """``log beta[s, t] = x[s, t] + sum_l P[s, t-l] * log_beta_p[l]``.

    Lag coefficients are shared across islands.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    log_beta_p = np.asarray(log_beta_p, dtype=float).reshape(N_LAGS)
    lags = precipitation_lags(config, x.shape[1])
    return x + lags @ log_beta_p


def chikv_baseline_log_beta(b, config: ChikvConfig, log_beta_p, T: int) -> np.ndarray:
    b = np.asarray(b, dtype=float).reshape(config.S)
    return chikv_log_beta(np.repeat(b[:, None], T, axis=1), config, log_beta_p)


def chikv_exposure(observed, config: ChikvConfig) -> np.ndarray:
    """Previous-week incidence (plus the configured offset)."""
    o = np.atleast_2d(np.asarray(observed, dtype=float))
    first = o[:, 0] if config.initial_exposure is None else config.initial_exposure
    prev = np.concatenate([first[:, None], o[:, :-1]], axis=1)
    return prev + config.exposure_offset


def susceptible_fraction(counts, populations) -> np.ndarray:
    """``1 - (cumulative counts strictly before t) / N``, per row."""
    c = np.atleast_2d(np.asarray(counts, dtype=float))
    before = np.cumsum(c, axis=1) - c
    return 1.0 - before / np.asarray(populations, dtype=float)[:, None]


def chikv_expected_infections(beta, observed, config: ChikvConfig, exposure=None) -> np.ndarray:
    """Expected weekly incidence ``beta * exposure * (1 - prior cumulative / N)``."""
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    z = susceptible_fraction(observed, config.populations)
    if np.any(z < 0):
        raise ValueError("cumulative observed incidence exceeds the island population")
    if exposure is None:
        exposure = chikv_exposure(observed, config)
    return beta * exposure * z


def chikv_r_eff(x, incidence, config: ChikvConfig) -> np.ndarray:
    return susceptible_fraction(incidence, config.populations) * np.exp(np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# Delay distributions


def discretize_gamma(mean: float, cv: float, horizon: int) -> np.ndarray:
    """Daily masses of a Gamma(mean, cv) delay for days 1..horizon.

    Day 1 collects the mass on [0, 1.5]; day t >= 2 the mass on
    [t - 0.5, t + 0.5]. Entry k of the result is the mass of day k + 1.
    """
    if not (mean > 0 and cv > 0):
        raise ValueError("mean and cv must be positive")
    shape = 1.0 / cv**2
    scale = mean / shape
    edges = np.concatenate([[0.0], np.arange(1, horizon + 1) + 0.5])
    cdf = stats.gamma.cdf(edges, a=shape, scale=scale)
    return np.diff(cdf)


GENERATION_TIME = (6.5, 0.62)
INFECTION_TO_DEATH = (24.2, 0.39)


# ---------------------------------------------------------------------------
# Age-structured renewal model


@dataclass
class RenewalConfig:
    """Age-group populations, contacts, IFR and delay distributions.

    ``gen_time[k]`` and ``inf_to_death[k]`` are the masses at lag ``k + 1``
    days. ``seed_infections`` (shape (A,) or scalar) is the daily number of
    infections in each group during the first ``seed_days`` days.
    """

    populations: np.ndarray
    contact: np.ndarray
    ifr: np.ndarray
    gen_time: np.ndarray = field(default_factory=lambda: discretize_gamma(*GENERATION_TIME, 70))
    inf_to_death: np.ndarray = field(default_factory=lambda: discretize_gamma(*INFECTION_TO_DEATH, 100))
    seed_infections: np.ndarray | float = 10.0
    seed_days: int = SEED_DAYS
    changepoint_stride: int = 3

    def __post_init__(self):
        self.populations = np.atleast_1d(np.asarray(self.populations, dtype=float))
        self.contact = np.atleast_2d(np.asarray(self.contact, dtype=float))
        self.ifr = np.atleast_1d(np.asarray(self.ifr, dtype=float))
        self.gen_time = np.asarray(self.gen_time, dtype=float)
        self.inf_to_death = np.asarray(self.inf_to_death, dtype=float)
        a = self.populations.size
        if np.any(self.populations <= 0):
            raise ValueError("populations must be positive")
        if self.contact.shape != (a, a) or np.any(self.contact < 0):
            raise ValueError("contact matrix must be a nonnegative A x A matrix")
        if self.ifr.shape != (a,) or np.any((self.ifr < 0) | (self.ifr > 1)):
            raise ValueError("IFR must be an A-vector in [0, 1]")
        for name in ("gen_time", "inf_to_death"):
            g = getattr(self, name)
            if np.any(g < 0) or g.sum() > 1 + 1e-9:
                raise ValueError(f"{name} must be nonnegative with total mass <= 1")
        if self.changepoint_stride < 1 or self.seed_days < 1:
            raise ValueError("changepoint_stride and seed_days must be >= 1")

    @property
    def A(self) -> int:
        return self.populations.size


def _lag_weights(dist: np.ndarray, t: int) -> np.ndarray:
    """Weights for times 0..t-1 feeding time t: entry tau -> dist[t - tau - 1]."""
    w = np.zeros(t)
    lags = t - np.arange(t)  # lag t - tau, from t down to 1
    ok = lags <= dist.size
    w[ok] = dist[lags[ok] - 1]
    return w


def n_changepoints(T: int, stride: int) -> int:
    return -(-T // stride)


def expand_changepoints(x, stride: int, T: int) -> np.ndarray:
    """Repeat each changepoint value ``stride`` days and truncate to T days."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.repeat(x, stride, axis=1)[:, :T]


def collapse_changepoints(daily, stride: int, K: int) -> np.ndarray:
    """Adjoint of :func:`expand_changepoints`: sum daily values per plateau."""
    daily = np.atleast_2d(daily)
    pad = K * stride - daily.shape[1]
    daily = np.pad(daily, ((0, 0), (0, pad)))
    return daily.reshape(daily.shape[0], K, stride).sum(axis=2)


def _seed_matrix(config: RenewalConfig, seed=None) -> np.ndarray:
    s = config.seed_infections if seed is None else seed
    return np.broadcast_to(np.asarray(s, dtype=float), (config.A,)).astype(float)


def renewal_infections(beta, config: RenewalConfig, seed=None, return_state: bool = False):
    """Daily infections per age group (A x T).

    The first ``seed_days`` days are fixed at the seed level; afterwards
    ``i[a, t] = s[a, t] * beta[a, t] * sum_b C[a, b] * sum_{tau<t} i[b, tau] g[t - tau]``
    with the susceptible fraction clamped to [0, 1] and each step capped at
    the remaining susceptible pool ``N[a] * s[a, t]``.
    """
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    if np.any(beta < 0):
        raise ValueError("transmission probabilities must be nonnegative")
    a, T = beta.shape
    if a != config.A:
        raise ValueError("beta rows must match the number of age groups")
    seed_vals = _seed_matrix(config, seed)
    if np.any(seed_vals < 0):
        raise ValueError("seed infections must be nonnegative")
    n = config.populations
    inf = np.zeros((a, T))
    cum = np.zeros(a)
    sus = np.ones((a, T))
    force = np.zeros((a, T))
    unclamped = np.ones((a, T), dtype=bool)
    capped = np.zeros((a, T), dtype=bool)
    for t in range(T):
        raw = 1.0 - cum / n
        unclamped[:, t] = (raw > 0) & (raw <= 1)
        sus[:, t] = np.clip(raw, 0.0, 1.0)
        if t < config.seed_days:
            inf[:, t] = seed_vals
        else:
            f = inf[:, :t] @ _lag_weights(config.gen_time, t)
            force[:, t] = config.contact @ f
            raw_inf = sus[:, t] * beta[:, t] * force[:, t]
            # a single step cannot infect more than the remaining susceptibles
            room = n * sus[:, t]
            capped[:, t] = raw_inf > room
            inf[:, t] = np.where(capped[:, t], room, raw_inf)
        cum = cum + inf[:, t]
    if return_state:
        return inf, {"sus": sus, "force": force, "unclamped": unclamped, "capped": capped}
    return inf


def renewal_infections_adjoint(beta, config: RenewalConfig, inf, state, inf_bar, seed=None):
    """Gradients with respect to ``beta`` and the seed level given d(obj)/d(inf)."""
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    a, T = beta.shape
    n = config.populations
    ibar = np.array(inf_bar, dtype=float, copy=True)
    beta_bar = np.zeros((a, T))
    seed_bar = np.zeros(a)
    sus, force, unclamped = state["sus"], state["force"], state["unclamped"]
    capped = state.get("capped", np.zeros((a, T), dtype=bool))
    for t in range(T - 1, -1, -1):
        g = ibar[:, t]
        if t < config.seed_days:
            seed_bar += g
            continue
        free = ~capped[:, t]
        beta_bar[:, t] = free * g * sus[:, t] * force[:, t]
        sus_bar = np.where(free, g * beta[:, t] * force[:, t], g * n) * unclamped[:, t]
        force_bar = free * g * sus[:, t] * beta[:, t]
        f_bar = config.contact.T @ force_bar
        ibar[:, :t] += np.outer(f_bar, _lag_weights(config.gen_time, t))
        # sus[:, t] = 1 - sum_{tau < t} inf[:, tau] / N
        ibar[:, :t] -= (sus_bar / n)[:, None]
    return beta_bar, seed_bar


def _delay_matrix(dist: np.ndarray, T: int) -> np.ndarray:
    """Lower-triangular H with H[t, s] = dist[t - s - 1] for s < t."""
    idx = np.arange(T)
    lag = idx[:, None] - idx[None, :]
    h = np.zeros((T, T))
    ok = (lag >= 1) & (lag <= dist.size)
    h[ok] = dist[lag[ok] - 1]
    return h


def expected_deaths(infections, config: RenewalConfig) -> np.ndarray:
    """``d[a, t] = IFR[a] * sum_{s<t} i[a, s] h[t - s]``."""
    inf = np.atleast_2d(np.asarray(infections, dtype=float))
    h = _delay_matrix(config.inf_to_death, inf.shape[1])
    return config.ifr[:, None] * (inf @ h.T)


def expected_deaths_adjoint(d_bar, config: RenewalConfig) -> np.ndarray:
    d_bar = np.atleast_2d(d_bar)
    h = _delay_matrix(config.inf_to_death, d_bar.shape[1])
    return (config.ifr[:, None] * d_bar) @ h


# ---------------------------------------------------------------------------
# Negative binomial observation model


def negbin_logpmf(y, d, phi) -> np.ndarray:
    """Elementwise log NegBin(y | mean d, size d/phi).

    Cells with ``d <= 0`` have all mass at zero: log-pmf 0 if ``y == 0``,
    otherwise ``-inf``.
    """
    y, d = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(d, dtype=float))
    if not phi > 0:
        raise ValueError("overdispersion phi must be positive")
    out = np.zeros(y.shape)
    pos = d > 0
    xi = np.where(pos, d, 1.0) / phi
    val = (
        special.gammaln(y + xi)
        - special.gammaln(xi)
        - special.gammaln(y + 1.0)
        - xi * np.log1p(phi)
        + y * (np.log(phi) - np.log1p(phi))
    )
    out = np.where(pos, val, np.where(y > 0, -np.inf, 0.0))
    return out


def negbin_logpmf_grad(y, d, phi):
    """Elementwise partial derivatives of :func:`negbin_logpmf` in ``d`` and ``phi``."""
    y, d = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(d, dtype=float))
    pos = d > 0
    dd = np.where(pos, d, 0.0)
    xi = np.where(pos, d, 1.0) / phi
    dig = special.digamma(y + xi) - special.digamma(xi)
    # y = 0 makes dig exactly 0; keep the d -> 0 limit finite.
    g_d = np.where(pos, (dig - np.log1p(phi)) / phi, -np.log1p(phi) / phi)
    g_phi = np.where(
        pos,
        -(dd / phi**2) * (dig - np.log1p(phi)) - xi / (1.0 + phi) + y / (phi * (1.0 + phi)),
        0.0,
    )
    return g_d, g_phi


def negbin_loglik(y, d, phi) -> float:
    return float(np.sum(negbin_logpmf(y, d, phi)))


def negbin_sample(d, phi, rng) -> np.ndarray:
    """Draw counts with mean ``d`` and variance ``d * (1 + phi)``."""
    d = np.asarray(d, dtype=float)
    rng = np.random.default_rng(rng)
    pos = d > 0
    xi = np.where(pos, d, 1.0) / phi
    draws = rng.negative_binomial(xi, 1.0 / (1.0 + phi))
    return np.where(pos, draws, 0).astype(float)
