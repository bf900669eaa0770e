"""Closed-form Gaussian computations for the linear-Gaussian multi-task model.

Observations are a stacked, task-major vector over a common time grid, with
``NaN`` marking missing cells. Missing cells are simply dropped from the
conditioning set, which covers unbalanced designs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import (
    NumericalError,
    chol_inverse,
    chol_logdet,
    chol_solve,
    cholesky,
    psd_factor,
    solve_lower,
    symmetrize,
)
from .kernels import (
    CovStructure,
    KernelFamily,
    Structure,
    TimeGrid,
    assemble_joint_cov,
    cross_cov,
    gram,
    joint_cov_grads,
    stacked_index,
)

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianDist:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {mean.size}")
        if not np.allclose(cov, cov.T, atol=1e-10, rtol=0):
            raise ValueError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


@dataclass(frozen=True)
class ObservationNoise:
    sigma_y: float

    def __post_init__(self):
        if not self.sigma_y >= 0:
            raise ValueError("observation s.d. must be nonnegative")


def _observed(y: np.ndarray, grid: TimeGrid, p: int):
    y = np.asarray(y, dtype=float).ravel()
    if y.size != grid.n * p:
        raise ValueError(f"expected {grid.n * p} stacked observations, got {y.size}")
    tasks, times = stacked_index(grid, p)
    obs = ~np.isnan(y)
    return y[obs], tasks[obs], times[obs], obs


def _unit_kernel(kernel, times, want_grad):
    """Unit-scale Gram over ``times`` and its lengthscale derivative (EQ only)."""
    if kernel.family is KernelFamily.BM:
        return np.minimum(times[:, None], times[None, :]), None
    d2 = (times[:, None] - times[None, :]) ** 2
    ell = kernel.lengthscale
    c = np.exp(-d2 / (2.0 * ell * ell))
    return c, (c * d2 / ell**3 if want_grad else None)


def _cov_parts(struct: CovStructure, tasks, times, want_grad=False):
    """Joint covariance over stacked points and its parameter derivatives.

    Derivatives come as ``(name, index, matrix)`` with ``index`` None for
    full-size matrices and an ``np.ix_`` pair for task-diagonal blocks. Same
    values as :func:`xgp.kernels.joint_cov_grads`, computed blockwise.
    """
    size = tasks.size
    k = np.zeros((size, size))
    parts = []
    if struct.kind is not Structure.INDEPENDENT:
        c, dc = _unit_kernel(struct.mean_kernel, times, want_grad)
        sm = struct.sigma_mu
        k += sm**2 * c
        if want_grad:
            parts.append(("sigma_mu", None, 2.0 * sm * c))
            if dc is not None:
                parts.append(("ell_mu", None, sm**2 * dc))
    shared_sigma = len(struct.variances.sigma_task) == 1
    shared_kernel = len(struct.task_kernel) == 1
    cache = {}
    for task in np.unique(tasks):
        task = int(task)
        idx = np.flatnonzero(tasks == task)
        ix = np.ix_(idx, idx)
        kern = struct.task_kernel_for(task)
        s = struct.task_sigma(task)
        key = (kern, idx.size, times[idx].tobytes())
        if key not in cache:
            cache[key] = _unit_kernel(kern, times[idx], want_grad)
        c, dc = cache[key]
        k[ix] += s**2 * c
        if want_grad:
            parts.append(("sigma_x" if shared_sigma else f"sigma_{task + 1}", ix, 2.0 * s * c))
            if dc is not None:
                parts.append(("ell_x" if shared_kernel else f"ell_{task + 1}", ix, s**2 * dc))
    return k, parts


def _noisy_chol(struct, tasks, times, sigma_y):
    k, _ = _cov_parts(struct, tasks, times)
    lower, _ = cholesky(k + sigma_y**2 * np.eye(tasks.size))
    return lower


def log_marginal_y(y, struct: CovStructure, grid: TimeGrid, p: int, noise: ObservationNoise) -> float:
    """Log density of the stacked observations with latents integrated out."""
    struct.check_tasks(p)
    yo, tasks, times, _ = _observed(y, grid, p)
    if yo.size == 0:
        return 0.0
    lower = _noisy_chol(struct, tasks, times, noise.sigma_y)
    w = solve_lower(lower, yo)
    return float(-0.5 * w @ w - 0.5 * chol_logdet(lower) - 0.5 * yo.size * LOG_2PI)


def log_marginal_y_grad(y, struct: CovStructure, grid: TimeGrid, p: int, noise: ObservationNoise):
    """Value and gradient of :func:`log_marginal_y`.

    The gradient is a dict keyed by covariance parameter name (see
    :func:`xgp.kernels.joint_cov_grads`) plus ``sigma_y``, taken with respect
    to the natural (constrained) parameters.
    """
    struct.check_tasks(p)
    yo, tasks, times, _ = _observed(y, grid, p)
    if yo.size == 0:
        return 0.0, {}
    k, parts = _cov_parts(struct, tasks, times, want_grad=True)
    lower, _ = cholesky(k + noise.sigma_y**2 * np.eye(yo.size))
    w = solve_lower(lower, yo)
    value = float(-0.5 * w @ w - 0.5 * chol_logdet(lower) - 0.5 * yo.size * LOG_2PI)
    alpha = chol_solve(lower, yo)
    kinv = chol_inverse(lower)
    # d/dtheta = 0.5 * tr((alpha alpha' - K^-1) dK)
    wmat = np.outer(alpha, alpha) - kinv
    grads: dict[str, float] = {}
    for name, ix, dk in parts:
        wsub = wmat if ix is None else wmat[ix]
        grads[name] = grads.get(name, 0.0) + 0.5 * float(np.sum(wsub * dk))
    grads["sigma_y"] = float(noise.sigma_y * np.trace(wmat))
    return value, grads


def sequential_loglik(y, struct: CovStructure, grid: TimeGrid, p: int, noise: ObservationNoise) -> np.ndarray:
    """Per-observation terms ``log p(y_k | y_<k)`` of the marginal likelihood.

    Returned in stacked order with ``NaN`` at missing cells; the finite entries
    sum to :func:`log_marginal_y`.
    """
    yo, tasks, times, obs = _observed(y, grid, p)
    out = np.full(obs.size, np.nan)
    if yo.size == 0:
        return out
    lower = _noisy_chol(struct, tasks, times, noise.sigma_y)
    w = solve_lower(lower, yo)
    out[obs] = -0.5 * w**2 - np.log(np.diag(lower)) - 0.5 * LOG_2PI
    return out


def condition(k_oo, k_so, k_ss, y_o, jitter_ladder=None) -> GaussianDist:
    """Gaussian conditional of s given o, for a zero-mean joint."""
    lower, _ = cholesky(symmetrize(k_oo)) if jitter_ladder is None else cholesky(symmetrize(k_oo), jitter_ladder)
    mean = k_so @ chol_solve(lower, y_o)
    v = solve_lower(lower, k_so.T)
    cov = symmetrize(k_ss - v.T @ v)
    return GaussianDist(mean, cov)


def posterior_x(y, struct: CovStructure, grid: TimeGrid, p: int, noise: ObservationNoise) -> GaussianDist:
    """Latent values on the full stacked grid given the observed entries of ``y``."""
    struct.check_tasks(p)
    yo, tasks, times, _ = _observed(y, grid, p)
    all_tasks, all_times = stacked_index(grid, p)
    k_all = assemble_joint_cov(struct, grid, p)
    if yo.size == 0:
        return GaussianDist(np.zeros(all_tasks.size), k_all)
    k_oo = cross_cov(struct, tasks, times, tasks, times) + noise.sigma_y**2 * np.eye(yo.size)
    k_so = cross_cov(struct, all_tasks, all_times, tasks, times)
    return condition(k_oo, k_so, k_all, yo)


def posterior_m(x_draws, struct: CovStructure, grid: TimeGrid, p: int) -> GaussianDist:
    """Shared mean process given the task latents ``x_draws`` of shape (p, n).

    Posterior precision is ``Sigma_mu^-1 + sum_i Sigma_i^-1``; with a common
    task covariance this is the familiar ``Sigma_mu^-1 + p Sigma_x^-1``.
    """
    if struct.kind is Structure.INDEPENDENT:
        raise ValueError("independent structure has no mean process")
    struct.check_tasks(p)
    x = np.asarray(x_draws, dtype=float).reshape(p, grid.n)
    try:
        l_mu, _ = cholesky(struct.sigma_mu**2 * gram(struct.mean_kernel, grid))
    except NumericalError as err:
        raise NumericalError(f"mean-process covariance is singular: {err}", err.jitters) from err
    prec = chol_inverse(l_mu)
    rhs = np.zeros(grid.n)
    cache: dict = {}
    for i in range(p):
        key = (struct.task_sigma(i), struct.task_kernel_for(i))
        if key not in cache:
            try:
                l_i, _ = cholesky(key[0] ** 2 * gram(key[1], grid))
            except NumericalError as err:
                raise NumericalError(f"task covariance is singular: {err}", err.jitters) from err
            cache[key] = chol_inverse(l_i)
        prec = prec + cache[key]
        rhs = rhs + cache[key] @ x[i]
    l_post, _ = cholesky(symmetrize(prec))
    cov = symmetrize(chol_inverse(l_post))
    return GaussianDist(chol_solve(l_post, rhs), cov)


def predictive(
    ystar_grid: TimeGrid,
    ystar_tasks,
    y,
    struct: CovStructure,
    grid: TimeGrid,
    p: int,
    noise: ObservationNoise,
    include_obs_noise: bool = True,
) -> GaussianDist:
    """Predictive distribution over ``ystar_tasks x ystar_grid`` (task-major).

    Task ids at or beyond ``p`` are unseen tasks; they are only admissible
    when the task-level parameters are shared, and their cross-covariance
    with the data reduces to the shared-mean term.
    """
    struct.check_tasks(p)
    yo, tasks, times, _ = _observed(y, grid, p)
    star_tasks = np.repeat(np.asarray(ystar_tasks, dtype=int), ystar_grid.n)
    star_times = np.tile(ystar_grid.times, len(np.atleast_1d(ystar_tasks)))
    return predict_points(star_tasks, star_times, tasks, times, yo, struct, noise, include_obs_noise)


def predict_points(star_tasks, star_times, tasks, times, y_obs, struct, noise, include_obs_noise=True) -> GaussianDist:
    """Predictive distribution at arbitrary (task, time) points."""
    star_tasks = np.asarray(star_tasks, dtype=int)
    star_times = np.asarray(star_times, dtype=float)
    k_ss = cross_cov(struct, star_tasks, star_times, star_tasks, star_times)
    if include_obs_noise:
        k_ss = k_ss + noise.sigma_y**2 * np.eye(star_tasks.size)
    if np.size(y_obs) == 0:
        return GaussianDist(np.zeros(star_tasks.size), symmetrize(k_ss))
    k_oo = cross_cov(struct, tasks, times, tasks, times) + noise.sigma_y**2 * np.eye(np.size(y_obs))
    k_so = cross_cov(struct, star_tasks, star_times, tasks, times)
    return condition(k_oo, k_so, k_ss, np.asarray(y_obs, dtype=float))


def sample_gaussian(dist: GaussianDist, count: int, seed) -> np.ndarray:
    """``count`` draws of shape (count, dim); ``seed`` is an int or Generator."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    factor = psd_factor(dist.cov)
    z = rng.standard_normal((count, dist.dim))
    return dist.mean + z @ factor.T
