"""Model specification, parameter layout and the log posterior with gradient.

The sampler state is one flat unconstrained vector. Positive parameters are
stored on the log scale (Jacobian included); latent GP paths use a
non-centered form: ``X_i = sigma_mu L_mu z_mu + sigma_i L_i z_i`` where the
``L`` are Cholesky factors of unit-scale Gram matrices and the ``z`` are
standard normal. For the Gaussian likelihood the latents can instead be
integrated out exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import special

from .. import epimodels as epi
from .._linalg import NumericalError, cholesky, cholesky_tangent
from ..gp import LOG_2PI, ObservationNoise, log_marginal_y_grad, sequential_loglik
from ..kernels import (
    VARIANTS,
    KernelFamily,
    Structure,
    TimeGrid,
    gram,
    intra_class_rho,
    parse_variant,
    variant_param_names,
    variant_structure,
)
from .priors import Normal, PriorSet

ALL_VARIANTS = ("baseline",) + VARIANTS
LATENT_JITTER = (1e-8, 1e-6, 1e-4)
STD_NORMAL = Normal(0.0, 1.0)


class Likelihood(str, Enum):
    GAUSSIAN = "gaussian"
    CHIKV = "chikv_negbin"
    COVID = "covid_negbin"


@dataclass
class GaussianData:
    """Task series on a common grid; ``y`` has shape (p, n) with NaN for missing."""

    y: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.y.shape[1] != self.grid.n:
            raise ValueError("series length does not match the time grid")

    @property
    def p(self) -> int:
        return self.y.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.p


@dataclass
class ChikvData:
    observed: np.ndarray
    config: epi.ChikvConfig

    def __post_init__(self):
        self.observed = np.atleast_2d(np.asarray(self.observed, dtype=float))
        if np.any(~np.isfinite(self.observed)) or np.any(self.observed < 0):
            raise ValueError("incidence counts must be complete and nonnegative")
        if self.observed.shape[0] != self.config.S:
            raise ValueError("incidence rows must match the number of islands")
        epi.precipitation_lags(self.config, self.T)
        if np.any(epi.susceptible_fraction(self.observed, self.config.populations) < 0):
            raise ValueError("cumulative incidence exceeds island population")

    @property
    def T(self) -> int:
        return self.observed.shape[1]

    @property
    def n_tasks(self) -> int:
        return self.observed.shape[0]


@dataclass
class CovidData:
    deaths: np.ndarray
    config: epi.RenewalConfig

    def __post_init__(self):
        self.deaths = np.atleast_2d(np.asarray(self.deaths, dtype=float))
        if self.deaths.shape[0] != self.config.A:
            raise ValueError("death rows must match the number of age groups")

    @property
    def T(self) -> int:
        return self.deaths.shape[1]

    @property
    def K(self) -> int:
        return epi.n_changepoints(self.T, self.config.changepoint_stride)

    @property
    def n_tasks(self) -> int:
        return self.deaths.shape[0]


@dataclass
class ModelSpec:
    variant: str
    likelihood: Likelihood = Likelihood.GAUSSIAN
    priors: PriorSet = field(default_factory=PriorSet)
    marginalize: bool = True
    likelihood_weight: float = 1.0

    def __post_init__(self):
        self.likelihood = Likelihood(self.likelihood)
        if self.variant not in ALL_VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {ALL_VARIANTS}")
        if self.variant == "baseline" and self.likelihood is not Likelihood.CHIKV:
            raise ValueError("the baseline variant is only defined for the chikv_negbin likelihood")

    @property
    def latent(self) -> bool:
        """Whether latent paths are part of the sampler state."""
        return not (self.likelihood is Likelihood.GAUSSIAN and self.marginalize)


@dataclass
class Block:
    name: str
    size: int
    transform: str  # "log" or "identity"
    prior: object
    is_param: bool = True

    def element_names(self) -> list[str]:
        if self.size == 1:
            return [self.name]
        return [f"{self.name}[{k}]" for k in range(self.size)]


class Layout:
    def __init__(self, blocks: list[Block]):
        self.blocks = blocks
        self.slices = {}
        start = 0
        for b in blocks:
            self.slices[b.name] = slice(start, start + b.size)
            start += b.size
        self.dim = start
        self.log_mask = np.zeros(self.dim, dtype=bool)
        for b in blocks:
            if b.transform == "log":
                self.log_mask[self.slices[b.name]] = True

    @property
    def param_blocks(self) -> list[Block]:
        return [b for b in self.blocks if b.is_param]

    @property
    def param_names(self) -> list[str]:
        return [n for b in self.param_blocks for n in b.element_names()]

    def constrain(self, u: np.ndarray) -> dict[str, np.ndarray]:
        u = np.asarray(u, dtype=float)
        out = {}
        for b in self.blocks:
            v = u[self.slices[b.name]]
            out[b.name] = np.exp(v) if b.transform == "log" else v.copy()
        return out

    def unconstrain(self, values: dict) -> np.ndarray:
        u = np.zeros(self.dim)
        for b in self.blocks:
            v = np.asarray(values[b.name], dtype=float).reshape(b.size)
            u[self.slices[b.name]] = np.log(v) if b.transform == "log" else v
        return u

    def param_vector(self, values: dict) -> np.ndarray:
        return np.concatenate([np.atleast_1d(values[b.name]).ravel() for b in self.param_blocks])


# ---------------------------------------------------------------------------
# Non-centered latent GP paths


def _scalar(v) -> float:
    return float(np.asarray(v).reshape(-1)[0])


class LatentGP:
    """Maps standard-normal noise to task paths for one covariance variant."""

    def __init__(self, variant: str, p: int, times):
        self.variant = variant
        self.p = p
        self.times = np.asarray(times, dtype=float)
        self.n = self.times.size
        self.kind, self.family = parse_variant(variant)
        self.has_mean = self.kind is not Structure.INDEPENDENT
        self.names = variant_param_names(variant, p)
        self.shared_sigma = self.kind is Structure.EXCHANGEABLE
        self.shared_ell = self.family is KernelFamily.EQ and self.kind is Structure.EXCHANGEABLE
        self._bm_chol = None
        if self.family is KernelFamily.BM:
            from ..kernels import KernelSpec

            self._bm_chol, _ = cholesky(gram(KernelSpec.bm(), self.times), LATENT_JITTER)

    def _sig(self, k):
        return "sigma_x" if self.shared_sigma else f"sigma_{k + 1}"

    def _ell(self, k):
        return "ell_x" if self.shared_ell else f"ell_{k + 1}"

    def _factor(self, ell):
        """Cholesky factor of the unit Gram and its lengthscale tangent."""
        if ell is None:
            return self._bm_chol, None
        d = self.times[:, None] - self.times[None, :]
        c = np.exp(-(d * d) / (2 * ell * ell))
        lower, _ = cholesky(c, LATENT_JITTER)
        dc = c * d * d / ell**3
        return lower, cholesky_tangent(lower, dc)

    def forward(self, params: dict, z_mu, z):
        z = np.asarray(z, dtype=float).reshape(self.p, self.n)
        eq = self.family is KernelFamily.EQ
        cache = {"z": z, "z_mu": z_mu, "task": {}}
        x = np.zeros((self.p, self.n))
        if self.has_mean:
            l_mu, dl_mu = self._factor(_scalar(params["ell_mu"]) if eq else None)
            m = _scalar(params["sigma_mu"]) * (l_mu @ z_mu)
            x += m
            cache.update(l_mu=l_mu, dl_mu=dl_mu, m=m)
        factors = {}
        for k in range(self.p):
            key = self._ell(k) if eq else None
            if key not in factors:
                factors[key] = self._factor(_scalar(params[key]) if eq else None)
            lower, dlower = factors[key]
            x[k] += _scalar(params[self._sig(k)]) * (lower @ z[k])
            cache["task"][k] = (lower, dlower)
        return x, cache

    def backward(self, params: dict, cache, x_bar) -> dict:
        eq = self.family is KernelFamily.EQ
        grads: dict[str, np.ndarray] = {name: np.zeros(1) for name in self.names}
        z = cache["z"]
        if self.has_mean:
            s_bar = x_bar.sum(axis=0)
            l_mu = cache["l_mu"]
            sm = _scalar(params["sigma_mu"])
            grads["sigma_mu"] += s_bar @ (l_mu @ cache["z_mu"])
            if eq:
                grads["ell_mu"] += sm * (s_bar @ (cache["dl_mu"] @ cache["z_mu"]))
            grads["z_mu"] = sm * (l_mu.T @ s_bar)
        z_bar = np.zeros_like(z)
        for k in range(self.p):
            lower, dlower = cache["task"][k]
            s = _scalar(params[self._sig(k)])
            grads[self._sig(k)] += x_bar[k] @ (lower @ z[k])
            if eq:
                grads[self._ell(k)] += s * (x_bar[k] @ (dlower @ z[k]))
            z_bar[k] = s * (lower.T @ x_bar[k])
        grads["z"] = z_bar.ravel()
        return grads


# ---------------------------------------------------------------------------
# Posterior


class Posterior:
    """Log posterior, gradient and pointwise log-likelihood for one model/data pair."""

    def __init__(self, model: ModelSpec, data):
        self.model = model
        self.data = data
        lik = model.likelihood
        expected = {Likelihood.GAUSSIAN: GaussianData, Likelihood.CHIKV: ChikvData, Likelihood.COVID: CovidData}[lik]
        if not isinstance(data, expected):
            raise TypeError(f"{lik.value} likelihood needs {expected.__name__}, got {type(data).__name__}")
        self.p = data.n_tasks
        pri = model.priors
        blocks: list[Block] = []
        if model.variant != "baseline":
            for name in variant_param_names(model.variant, self.p):
                role = "sigma" if name.startswith("sigma") else "lengthscale"
                blocks.append(Block(name, 1, "log", pri.for_param(name, role)))
        if lik is Likelihood.GAUSSIAN:
            blocks.append(Block("sigma_y", 1, "log", pri.for_param("sigma_y", "sigma")))
            times = data.grid.times
        elif lik is Likelihood.CHIKV:
            if model.variant == "baseline":
                blocks.append(Block("mu_B", 1, "identity", pri.for_param("mu_B", "location")))
                blocks.append(Block("sigma_B", 1, "log", pri.for_param("sigma_B", "sigma")))
            blocks.append(Block("log_beta_P", epi.N_LAGS, "identity", pri.for_param("log_beta_P", "log_beta_p")))
            blocks.append(Block("phi_O", 1, "log", pri.for_param("phi_O", "overdispersion")))
            times = np.arange(1, data.T + 1, dtype=float)
        else:
            blocks.append(Block("phi_D", 1, "log", pri.for_param("phi_D", "overdispersion")))
            blocks.append(Block("seed", 1, "log", pri.for_param("seed", "seed")))
            times = np.arange(1, data.K + 1, dtype=float)
        self.times = times
        self.gp = None
        if model.variant == "baseline":
            blocks.append(Block("z_b", self.p, "identity", STD_NORMAL, is_param=False))
        elif model.latent:
            self.gp = LatentGP(model.variant, self.p, times)
            if lik is not Likelihood.GAUSSIAN:
                blocks.append(Block("x0", self.p, "identity", pri.for_param("x0", "location"), is_param=False))
            if self.gp.has_mean:
                blocks.append(Block("z_mu", times.size, "identity", STD_NORMAL, is_param=False))
            blocks.append(Block("z", self.p * times.size, "identity", STD_NORMAL, is_param=False))
        self.layout = Layout(blocks)
        if lik is Likelihood.CHIKV:
            self._lags = epi.precipitation_lags(data.config, data.T)
            self._exposure_depletion = epi.chikv_exposure(data.observed, data.config) * epi.susceptible_fraction(
                data.observed, data.config.populations
            )

    @property
    def dim(self) -> int:
        return self.layout.dim

    # -- pieces -------------------------------------------------------------

    def structure(self, vals: dict):
        names = variant_param_names(self.model.variant, self.p)
        return variant_structure(self.model.variant, {n: float(vals[n][0]) for n in names}, self.p)

    def _log_prior(self, vals):
        lp = 0.0
        grads = {}
        for b in self.layout.blocks:
            v = vals[b.name]
            lp += float(np.sum(b.prior.logpdf(v)))
            grads[b.name] = np.asarray(b.prior.dlogpdf(v), dtype=float) * np.ones(b.size)
        return lp, grads

    def _loglik(self, vals, want_grad=True, pointwise=False):
        """Returns (loglik, grads by block name, pointwise array or None, extras)."""
        lik = self.model.likelihood
        if lik is Likelihood.GAUSSIAN:
            return self._gaussian(vals, want_grad, pointwise)
        if lik is Likelihood.CHIKV:
            return self._chikv(vals, want_grad, pointwise)
        return self._covid(vals, want_grad, pointwise)

    def _gaussian(self, vals, want_grad, pointwise):
        data = self.data
        noise = ObservationNoise(float(vals["sigma_y"][0]))
        if not self.model.latent:
            struct = self.structure(vals)
            y = data.y.ravel()
            ll, g = log_marginal_y_grad(y, struct, data.grid, self.p, noise)
            grads = {k: np.atleast_1d(v) for k, v in g.items()}
            pw = sequential_loglik(y, struct, data.grid, self.p, noise) if pointwise else None
            return ll, grads, pw, {}
        x, cache = self.gp.forward(vals, vals.get("z_mu"), vals["z"])
        obs = ~np.isnan(data.y)
        sy = noise.sigma_y
        r = np.where(obs, data.y - x, 0.0)
        cell = np.where(obs, -0.5 * (r / sy) ** 2 - np.log(sy) - 0.5 * LOG_2PI, np.nan)
        ll = float(np.nansum(cell))
        grads = {}
        if want_grad:
            grads = self.gp.backward(vals, cache, r / sy**2)
            grads["sigma_y"] = np.atleast_1d(np.sum(np.where(obs, -1.0 / sy + r**2 / sy**3, 0.0)))
        return ll, grads, cell.ravel() if pointwise else None, {"x": x, "m": cache.get("m")}

    def _chikv(self, vals, want_grad, pointwise):
        data = self.data
        phi = float(vals["phi_O"][0])
        c = vals["log_beta_P"]
        cov_term = self._lags @ c
        cache = None
        if self.model.variant == "baseline":
            b = vals["mu_B"][0] + vals["sigma_B"][0] * vals["z_b"]
            x = np.repeat(b[:, None], data.T, axis=1)
        else:
            xg, cache = self.gp.forward(vals, vals.get("z_mu"), vals["z"])
            x = vals["x0"][:, None] + xg
        log_beta = x + cov_term
        with np.errstate(over="ignore"):
            beta = np.exp(log_beta)
            d = beta * self._exposure_depletion
        cell = epi.negbin_logpmf(data.observed, d, phi)
        ll = float(np.sum(cell))
        extras = {"x": x, "beta": beta, "expected": d, "m": None if cache is None else cache.get("m")}
        grads = {}
        if want_grad and np.isfinite(ll):
            g_d, g_phi = epi.negbin_logpmf_grad(data.observed, d, phi)
            lb_bar = g_d * d
            grads["log_beta_P"] = np.einsum("stl,st->l", self._lags, lb_bar)
            grads["phi_O"] = np.atleast_1d(g_phi.sum())
            x_bar = lb_bar
            if self.model.variant == "baseline":
                b_bar = x_bar.sum(axis=1)
                grads["mu_B"] = np.atleast_1d(b_bar.sum())
                grads["sigma_B"] = np.atleast_1d(b_bar @ vals["z_b"])
                grads["z_b"] = vals["sigma_B"][0] * b_bar
            else:
                grads.update(self.gp.backward(vals, cache, x_bar))
                grads["x0"] = x_bar.sum(axis=1)
        return ll, grads, cell.ravel() if pointwise else None, extras

    def _covid(self, vals, want_grad, pointwise):
        data = self.data
        cfg = data.config
        phi = float(vals["phi_D"][0])
        seed = float(vals["seed"][0])
        xg, cache = self.gp.forward(vals, vals.get("z_mu"), vals["z"])
        x = vals["x0"][:, None] + xg
        daily = epi.expand_changepoints(x, cfg.changepoint_stride, data.T)
        beta = special.expit(daily)
        inf, state = epi.renewal_infections(beta, cfg, seed=seed, return_state=True)
        d = epi.expected_deaths(inf, cfg)
        obs = ~np.isnan(data.deaths)
        cell = np.where(obs, epi.negbin_logpmf(np.where(obs, data.deaths, 0.0), d, phi), np.nan)
        ll = float(np.nansum(cell))
        extras = {"x": x, "beta": beta, "infections": inf, "expected": d, "m": cache.get("m")}
        grads = {}
        if want_grad and np.isfinite(ll):
            g_d, g_phi = epi.negbin_logpmf_grad(np.where(obs, data.deaths, 0.0), d, phi)
            g_d = np.where(obs, g_d, 0.0)
            grads["phi_D"] = np.atleast_1d(np.sum(np.where(obs, g_phi, 0.0)))
            i_bar = epi.expected_deaths_adjoint(g_d, cfg)
            beta_bar, seed_bar = epi.renewal_infections_adjoint(beta, cfg, inf, state, i_bar, seed=seed)
            daily_bar = beta_bar * beta * (1.0 - beta)
            x_bar = epi.collapse_changepoints(daily_bar, cfg.changepoint_stride, data.K)
            grads.update(self.gp.backward(vals, cache, x_bar))
            grads["x0"] = x_bar.sum(axis=1)
            grads["seed"] = np.atleast_1d(seed_bar.sum())
        return ll, grads, cell.ravel() if pointwise else None, extras

    # -- public -------------------------------------------------------------

    def logp_grad(self, u) -> tuple[float, np.ndarray]:
        """Log posterior (up to a constant) on the unconstrained scale and its gradient.

        Non-finite densities come back as ``(-inf, zeros)``.
        """
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,) or not np.all(np.isfinite(u)):
            return -np.inf, np.zeros(self.dim)
        lay = self.layout
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            vals = lay.constrain(u)
            try:
                lp, gp_ = self._log_prior(vals)
                w = self.model.likelihood_weight
                if w != 0:
                    ll, gl, _, _ = self._loglik(vals, want_grad=True)
                else:
                    ll, gl = 0.0, {}
            except (NumericalError, np.linalg.LinAlgError, FloatingPointError, ValueError, ArithmeticError):
                return -np.inf, np.zeros(self.dim)
        total = lp + w * ll + float(np.sum(u[lay.log_mask]))
        if not np.isfinite(total):
            return -np.inf, np.zeros(self.dim)
        grad = np.zeros(self.dim)
        for b in lay.blocks:
            sl = lay.slices[b.name]
            g = gp_[b.name] + w * np.asarray(gl.get(b.name, 0.0), dtype=float)
            if b.transform == "log":
                g = g * vals[b.name] + 1.0
            grad[sl] = g
        if not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros(self.dim)
        return total, grad

    def logp(self, u) -> float:
        return self.logp_grad(u)[0]

    def pointwise_loglik(self, u) -> np.ndarray:
        """Per-observation log-likelihood terms (missing cells dropped)."""
        vals = self.layout.constrain(u)
        _, _, pw, _ = self._loglik(vals, want_grad=False, pointwise=True)
        return pw[~np.isnan(pw)]

    def observation_ids(self) -> list[str]:
        data = self.data
        if self.model.likelihood is Likelihood.GAUSSIAN:
            mask = ~np.isnan(data.y)
            times = data.grid.times
        elif self.model.likelihood is Likelihood.CHIKV:
            mask = np.ones_like(data.observed, dtype=bool)
            times = np.arange(1, data.T + 1)
        else:
            mask = ~np.isnan(data.deaths)
            times = np.arange(1, data.T + 1)
        return [f"{s}:{_fmt_time(times[t])}" for s in range(mask.shape[0]) for t in range(mask.shape[1]) if mask[s, t]]

    def latent_summary(self, u) -> dict:
        """Latent paths implied by a state vector (empty for the marginal Gaussian model)."""
        if not self.model.latent:
            return {}
        vals = self.layout.constrain(u)
        _, _, _, extras = self._loglik(vals, want_grad=False)
        out = {k: v for k, v in extras.items() if v is not None}
        if self.model.likelihood is Likelihood.CHIKV:
            out["r_eff"] = epi.chikv_r_eff(out["x"], self.data.observed, self.data.config)
        return out

    def derived(self, vals: dict) -> dict[str, float]:
        """Derived scalar quantities (intra-class correlations, covariate effects)."""
        out = {}
        v = self.model.variant
        if v in ("xBM", "xEQ"):
            out["rho"] = intra_class_rho(vals["sigma_mu"][0], vals["sigma_x"][0])
        elif v in ("mxBM", "mxEQ"):
            for k in range(self.p):
                out[f"rho_{k + 1}"] = intra_class_rho(vals["sigma_mu"][0], vals[f"sigma_{k + 1}"][0])
        if "log_beta_P" in vals:
            for k, c in enumerate(vals["log_beta_P"]):
                out[f"beta_P[{k}]"] = float(np.exp(c))
        return out

    def initial_point(self, rng, shrink: float = 0.1, max_tries: int = 100) -> np.ndarray:
        """Prior draw, mapped to the unconstrained scale and shrunk toward zero."""
        for _ in range(max_tries):
            vals = {b.name: np.atleast_1d(b.prior.sample(rng, b.size)) for b in self.layout.blocks}
            u = shrink * self.layout.unconstrain(vals)
            if np.isfinite(self.logp(u)):
                return u
        raise NumericalError(f"could not find an initial point with finite log posterior after {max_tries} prior draws")


def _fmt_time(t) -> str:
    t = float(t)
    return str(int(t)) if t.is_integer() else repr(t)


def log_posterior(theta, model: ModelSpec, data) -> tuple[float, np.ndarray]:
    """Log posterior and gradient at an unconstrained state vector."""
    return Posterior(model, data).logp_grad(theta)
