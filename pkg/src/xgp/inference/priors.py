"""Prior distributions with log-density gradients, and the default prior set.

Defaults are weakly informative placeholders; every one can be overridden
through :class:`PriorSet`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)


@dataclass(frozen=True)
class Normal:
    loc: float = 0.0
    scale: float = 1.0

    def logpdf(self, x):
        z = (np.asarray(x) - self.loc) / self.scale
        return -0.5 * z * z - np.log(self.scale) - _LOG_SQRT_2PI

    def dlogpdf(self, x):
        return -(np.asarray(x) - self.loc) / self.scale**2

    def sample(self, rng, size=None):
        return rng.normal(self.loc, self.scale, size)

    def ppf(self, q):
        return self.loc + self.scale * np.sqrt(2) * special.erfinv(2 * np.asarray(q) - 1)


@dataclass(frozen=True)
class HalfNormal:
    scale: float = 1.0

    def logpdf(self, x):
        x = np.asarray(x)
        z = x / self.scale
        return np.where(x >= 0, -0.5 * z * z - np.log(self.scale) - _LOG_SQRT_2PI + np.log(2), -np.inf)

    def dlogpdf(self, x):
        return -np.asarray(x) / self.scale**2

    def sample(self, rng, size=None):
        return np.abs(rng.normal(0.0, self.scale, size))

    def ppf(self, q):
        return self.scale * np.sqrt(2) * special.erfinv(np.asarray(q))


@dataclass(frozen=True)
class Gamma:
    shape: float = 2.0
    rate: float = 0.2

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.shape, self.rate
        with np.errstate(divide="ignore"):
            return np.where(x > 0, a * np.log(b) - special.gammaln(a) + (a - 1) * np.log(x) - b * x, -np.inf)

    def dlogpdf(self, x):
        return (self.shape - 1) / np.asarray(x) - self.rate

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, 1.0 / self.rate, size)

    def ppf(self, q):
        return special.gammaincinv(self.shape, np.asarray(q)) / self.rate


@dataclass(frozen=True)
class Exponential:
    rate: float = 1.0

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, np.log(self.rate) - self.rate * x, -np.inf)

    def dlogpdf(self, x):
        return -self.rate * np.ones_like(np.asarray(x, dtype=float))

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size)

    def ppf(self, q):
        return -np.log1p(-np.asarray(q)) / self.rate


@dataclass(frozen=True)
class LogNormal:
    loc: float = 0.0
    scale: float = 1.0

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        lx = np.log(x)
        z = (lx - self.loc) / self.scale
        return -0.5 * z * z - np.log(self.scale) - _LOG_SQRT_2PI - lx

    def dlogpdf(self, x):
        x = np.asarray(x, dtype=float)
        return (-(np.log(x) - self.loc) / self.scale**2 - 1.0) / x

    def sample(self, rng, size=None):
        return np.exp(rng.normal(self.loc, self.scale, size))

    def ppf(self, q):
        return np.exp(Normal(self.loc, self.scale).ppf(q))


Prior = Normal | HalfNormal | Gamma | Exponential | LogNormal

PRIOR_TYPES = {cls.__name__: cls for cls in (Normal, HalfNormal, Gamma, Exponential, LogNormal)}


def prior_from_dict(spec: dict) -> Prior:
    spec = dict(spec)
    kind = spec.pop("dist")
    if kind not in PRIOR_TYPES:
        raise ValueError(f"unknown prior {kind!r}; choose from {sorted(PRIOR_TYPES)}")
    return PRIOR_TYPES[kind](**spec)


def prior_to_dict(prior: Prior) -> dict:
    return {"dist": type(prior).__name__, **prior.__dict__}


@dataclass(frozen=True)
class PriorSet:
    """Default priors by parameter role.

    ``overrides`` maps an exact parameter name (e.g. ``"sigma_mu"``) to a
    prior and takes precedence over the role defaults.
    """

    sigma: Prior = HalfNormal(1.0)
    lengthscale: Prior = Gamma(2.0, 0.2)
    location: Prior = Normal(0.0, 2.0)
    overdispersion: Prior = Exponential(1.0)
    log_beta_p: Prior = Normal(0.0, 0.5)
    seed: Prior = LogNormal(np.log(10.0), 2.0)
    overrides: dict = field(default_factory=dict)

    def for_param(self, name: str, role: str) -> Prior:
        if name in self.overrides:
            return self.overrides[name]
        return getattr(self, role)

    def with_overrides(self, **priors) -> "PriorSet":
        return replace(self, overrides={**self.overrides, **priors})
