"""Type-II maximum likelihood for the linear-Gaussian model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .model import GaussianData, Likelihood, ModelSpec, Posterior


@dataclass
class StartResult:
    start: np.ndarray
    u: np.ndarray
    log_marginal: float
    grad_norm: float
    converged: bool
    message: str


@dataclass
class OptimResult:
    params: dict[str, float]
    log_marginal: float
    u: np.ndarray
    grad_norm: float
    starts: list[StartResult] = field(default_factory=list)


class OptimizationError(RuntimeError):
    def __init__(self, message, starts):
        super().__init__(message)
        self.starts = starts


def marginal_objective(post: Posterior, u) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and its gradient on the log-parameter scale."""
    vals = post.layout.constrain(u)
    ll, grads, _, _ = post._loglik(vals, want_grad=True)
    g = np.zeros(post.dim)
    for b in post.layout.blocks:
        sl = post.layout.slices[b.name]
        g[sl] = np.asarray(grads.get(b.name, 0.0)) * vals[b.name]
    return ll, g


def optimize_marginal(model: ModelSpec, data: GaussianData, starts: int = 5, seed: int = 0, gtol: float = 1e-9) -> OptimResult:
    """Multi-start quasi-Newton ascent of the log marginal likelihood."""
    if model.likelihood is not Likelihood.GAUSSIAN:
        raise ValueError("marginal-likelihood optimization needs the gaussian likelihood")
    model = ModelSpec(model.variant, model.likelihood, model.priors, marginalize=True)
    post = Posterior(model, data)
    rng = np.random.default_rng(seed)

    def neg(u):
        try:
            ll, g = marginal_objective(post, u)
        except (np.linalg.LinAlgError, ValueError, ArithmeticError):
            return np.inf, np.zeros_like(u)
        if not np.isfinite(ll):
            return np.inf, np.zeros_like(u)
        return -ll, -g

    results = []
    for _ in range(starts):
        vals = {b.name: np.atleast_1d(b.prior.sample(rng, b.size)) for b in post.layout.blocks}
        u0 = np.clip(post.layout.unconstrain(vals), -8, 8)
        try:
            res = optimize.minimize(
                neg, u0, jac=True, method="L-BFGS-B", bounds=[(-20, 12)] * post.dim,
                options={"maxiter": 2000, "gtol": gtol, "ftol": 1e-15},
            )
            # polish without bounds
            res2 = optimize.minimize(neg, res.x, jac=True, method="BFGS", options={"gtol": gtol, "maxiter": 500})
            if np.isfinite(res2.fun) and res2.fun <= res.fun:
                res = res2
            val, g = neg(res.x)
            gn = float(np.linalg.norm(g))
            results.append(StartResult(u0, res.x, -val, gn, bool(np.isfinite(val) and gn < 1e-4), str(res.message)))
        except Exception as err:  # noqa: BLE001 - recorded per start
            results.append(StartResult(u0, u0, -np.inf, np.inf, False, repr(err)))
    finite = [r for r in results if np.isfinite(r.log_marginal)]
    if not finite:
        raise OptimizationError("all optimization starts failed", results)
    best = max(finite, key=lambda r: r.log_marginal)
    vals = post.layout.constrain(best.u)
    params = {name: float(v) for b in post.layout.blocks for name, v in zip(b.element_names(), vals[b.name])}
    return OptimResult(params, best.log_marginal, best.u, best.grad_norm, results)
