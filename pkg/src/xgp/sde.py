"""Exchangeable Brownian motion and Euler-Maruyama paths driven by it."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kernels import TimeGrid


def exchangeable_cov(p: int, sigma_mu: float, sigma_x: float) -> np.ndarray:
    return sigma_mu**2 * np.ones((p, p)) + sigma_x**2 * np.eye(p)


def exchangeable_chol(p: int, sigma_mu: float, sigma_x: float) -> np.ndarray:
    """Lower factor L with L L' = sigma_mu^2 J + sigma_x^2 I.

    Computed in closed form so the rank-one case (``sigma_x = 0``) is exact.
    """
    if p < 1:
        raise ValueError("task count must be at least 1")
    a, b = float(sigma_mu) ** 2, float(sigma_x) ** 2
    if a + b <= 0:
        raise ValueError("sigma_mu and sigma_x cannot both be zero")
    lower = np.zeros((p, p))
    # Column k of the factor of a*J + b*I has diagonal d_k and a constant
    # sub-diagonal value c_k; recursion from the Schur complements.
    off = a  # remaining common covariance after k columns
    diag = a + b
    for k in range(p):
        d = np.sqrt(diag)
        lower[k, k] = d
        if d > 0:
            c = off / d
            lower[k + 1 :, k] = c
            diag -= c * c
            off -= c * c
        else:
            lower[k + 1 :, k] = 0.0
    return lower


@dataclass
class ExchangeableDiffusion:
    p: int
    sigma_mu: float
    sigma_x: float
    drift: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("task count must be at least 1")
        if self.sigma_mu < 0 or self.sigma_x < 0:
            raise ValueError("scales must be nonnegative")

    @property
    def noiseless(self) -> bool:
        return self.sigma_mu == 0 and self.sigma_x == 0

    def diffusion_factor(self) -> np.ndarray:
        if self.noiseless:
            return np.zeros((self.p, self.p))
        return exchangeable_chol(self.p, self.sigma_mu, self.sigma_x)

    def drift_at(self, x: np.ndarray) -> np.ndarray:
        if self.drift is None:
            return np.zeros(self.p)
        return np.asarray(self.drift(x), dtype=float).reshape(self.p)


@dataclass(frozen=True)
class SdePath:
    times: TimeGrid
    states: np.ndarray

    def __post_init__(self):
        if self.states.shape[0] != self.times.n:
            raise ValueError("states row count must equal grid length")


def bm_increment(diff: ExchangeableDiffusion, delta: float, seed, size: int | None = None) -> np.ndarray:
    """Draw(s) from N(0, (sigma_mu^2 J + sigma_x^2 I) * delta)."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    rng = np.random.default_rng(seed)
    shape = (diff.p,) if size is None else (size, diff.p)
    z = rng.standard_normal(shape)
    return np.sqrt(delta) * z @ diff.diffusion_factor().T


def euler_maruyama(diff: ExchangeableDiffusion, x0, grid: TimeGrid, seed) -> SdePath:
    """Fixed-step Euler-Maruyama on ``grid``; the first state is ``x0``."""
    rng = np.random.default_rng(seed)
    factor = diff.diffusion_factor()
    n = grid.n
    states = np.empty((n, diff.p))
    states[0] = np.broadcast_to(np.asarray(x0, dtype=float), (diff.p,))
    dts = np.diff(grid.times)
    z = rng.standard_normal((n - 1, diff.p))
    for k in range(n - 1):
        m = diff.drift_at(states[k])
        if not np.all(np.isfinite(m)):
            raise FloatingPointError(f"non-finite drift at step {k} (t={grid.times[k]})")
        states[k + 1] = states[k] + m * dts[k] + np.sqrt(dts[k]) * (factor @ z[k])
    return SdePath(grid, states)
