"""No-U-Turn Hamiltonian Monte Carlo with warm-up adaptation.

Each transition builds a doubling trajectory with the leapfrog integrator
until a U-turn (or the depth cap), sampling the next state uniformly from the
slice-admissible states. During warm-up the step size is tuned by dual
averaging toward a target acceptance statistic, and a diagonal inverse metric
is estimated over expanding windows.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .diagnostics import diagnostics as compute_diagnostics
from .model import ModelSpec, Posterior

log = logging.getLogger(__name__)

DELTA_MAX = 1000.0


@dataclass
class SamplerConfig:
    chains: int = 4
    iterations: int = 2000
    warmup: int | None = None  # defaults to half of iterations
    thin: int = 1
    seed: int = 0
    target_accept: float = 0.8
    max_treedepth: int = 10
    adapt_metric: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        if self.warmup is None:
            self.warmup = self.iterations // 2
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.warmup < 0 or self.warmup > self.iterations:
            raise ValueError("warmup must lie in [0, iterations]")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")

    @property
    def kept_per_chain(self) -> int:
        return len(range(self.warmup, self.iterations, self.thin))


class SamplerError(RuntimeError):
    pass


@dataclass
class PosteriorDraws:
    """Retained draws from one or more chains, chain-major."""

    param_names: list[str]
    draws: np.ndarray
    chain: np.ndarray
    logdens: np.ndarray
    states: np.ndarray
    pointwise_ll: np.ndarray | None = None
    obs_ids: list[str] = field(default_factory=list)
    derived: dict[str, np.ndarray] = field(default_factory=dict)
    latent_draws: dict[str, np.ndarray] | None = None
    diagnostics: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def n_chains(self) -> int:
        return int(np.unique(self.chain).size)

    def param(self, name: str) -> np.ndarray:
        if name in self.derived:
            return self.derived[name]
        return self.draws[:, self.param_names.index(name)]

    def by_chain(self) -> np.ndarray:
        """Draws reshaped to (chains, draws_per_chain, n_params)."""
        c = self.n_chains
        return self.draws.reshape(c, self.n_draws // c, -1)

    def summary(self, names=None) -> dict[str, dict[str, float]]:
        names = list(self.param_names) + list(self.derived) if names is None else names
        out = {}
        for name in names:
            v = self.param(name)
            q = np.quantile(v, [0.025, 0.25, 0.5, 0.75, 0.975])
            out[name] = {
                "mean": float(v.mean()),
                "median": float(q[2]),
                "q2.5": float(q[0]),
                "q25": float(q[1]),
                "q75": float(q[3]),
                "q97.5": float(q[4]),
            }
        return out


# ---------------------------------------------------------------------------
# NUTS core


class _Target:
    def __init__(self, logp_grad):
        self.logp_grad = logp_grad
        self.n_evals = 0

    def __call__(self, q):
        self.n_evals += 1
        return self.logp_grad(q)


def _leapfrog(target, q, p, g, eps, inv_metric):
    p = p + 0.5 * eps * g
    q = q + eps * inv_metric * p
    lp, g = target(q)
    p = p + 0.5 * eps * g
    return q, p, g, lp


def _kinetic(p, inv_metric):
    return 0.5 * float(np.dot(p * inv_metric, p))


def _no_uturn(q_minus, q_plus, p_minus, p_plus, inv_metric):
    dq = q_plus - q_minus
    return np.dot(dq, inv_metric * p_minus) >= 0 and np.dot(dq, inv_metric * p_plus) >= 0


def _build_tree(target, q, p, g, log_u, v, j, eps, h0, inv_metric, rng):
    """Returns (q-, p-, g-, q+, p+, g+, q', g', lp', n', s', alpha_sum, n_alpha, divergent)."""
    if j == 0:
        q1, p1, g1, lp1 = _leapfrog(target, q, p, g, v * eps, inv_metric)
        h1 = -lp1 + _kinetic(p1, inv_metric) if np.isfinite(lp1) else np.inf
        if not np.isfinite(h1):
            h1 = np.inf
        n1 = int(log_u <= -h1)
        divergent = not (log_u < DELTA_MAX - h1)
        s1 = int(not divergent)
        alpha = min(1.0, np.exp(h0 - h1)) if np.isfinite(h1) else 0.0
        return q1, p1, g1, q1, p1, g1, q1, g1, lp1, n1, s1, alpha, 1, divergent
    (qm, pm, gm, qp, pp, gp, q1, g1, lp1, n1, s1, a1, na1, div) = _build_tree(
        target, q, p, g, log_u, v, j - 1, eps, h0, inv_metric, rng
    )
    if s1 == 1:
        if v == -1:
            qm, pm, gm, _, _, _, q2, g2, lp2, n2, s2, a2, na2, div2 = _build_tree(
                target, qm, pm, gm, log_u, v, j - 1, eps, h0, inv_metric, rng
            )
        else:
            _, _, _, qp, pp, gp, q2, g2, lp2, n2, s2, a2, na2, div2 = _build_tree(
                target, qp, pp, gp, log_u, v, j - 1, eps, h0, inv_metric, rng
            )
        if n1 + n2 > 0 and rng.uniform() < n2 / (n1 + n2):
            q1, g1, lp1 = q2, g2, lp2
        n1 += n2
        s1 = int(s2 == 1 and _no_uturn(qm, qp, pm, pp, inv_metric))
        a1 += a2
        na1 += na2
        div = div or div2
    return qm, pm, gm, qp, pp, gp, q1, g1, lp1, n1, s1, a1, na1, div


def nuts_transition(target, q, lp, g, eps, inv_metric, rng, max_depth):
    p0 = rng.standard_normal(q.size) / np.sqrt(inv_metric)
    h0 = -lp + _kinetic(p0, inv_metric)
    log_u = -h0 + np.log(rng.uniform())
    qm = qp = q
    pm = pp = p0
    gm = gp = g
    q_new, lp_new, g_new = q, lp, g
    n, s, depth = 1, 1, 0
    alpha, n_alpha, divergent = 0.0, 1, False
    while s == 1 and depth < max_depth:
        v = 1 if rng.uniform() < 0.5 else -1
        if v == -1:
            qm, pm, gm, _, _, _, q1, g1, lp1, n1, s1, alpha, n_alpha, div = _build_tree(
                target, qm, pm, gm, log_u, v, depth, eps, h0, inv_metric, rng
            )
        else:
            _, _, _, qp, pp, gp, q1, g1, lp1, n1, s1, alpha, n_alpha, div = _build_tree(
                target, qp, pp, gp, log_u, v, depth, eps, h0, inv_metric, rng
            )
        divergent = divergent or div
        if s1 == 1 and rng.uniform() < min(1.0, n1 / n):
            q_new, lp_new, g_new = q1, lp1, g1
        n += n1
        s = int(s1 == 1 and _no_uturn(qm, qp, pm, pp, inv_metric))
        depth += 1
    return q_new, lp_new, g_new, alpha / max(n_alpha, 1), depth, divergent


def _find_reasonable_eps(target, q, lp, g, inv_metric, rng):
    eps = 1.0
    p = rng.standard_normal(q.size) / np.sqrt(inv_metric)
    h0 = -lp + _kinetic(p, inv_metric)

    def log_ratio(e):
        _, p1, _, lp1 = _leapfrog(target, q, p, g, e, inv_metric)
        if not np.isfinite(lp1):
            return -np.inf
        return h0 - (-lp1 + _kinetic(p1, inv_metric))

    r = log_ratio(eps)
    a = 1.0 if r > np.log(0.5) else -1.0
    for _ in range(100):
        if not a * r > -a * np.log(2.0):
            break
        eps *= 2.0**a
        if eps < 1e-12 or eps > 1e6:
            break
        r = log_ratio(eps)
    return float(eps)


class _DualAveraging:
    def __init__(self, eps, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = np.log(10 * eps)
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.restart(eps)

    def restart(self, eps):
        self.mu = np.log(10 * eps)
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.m = 0

    def update(self, accept_stat):
        self.m += 1
        m = self.m
        w = 1.0 / (m + self.t0)
        self.h_bar = (1 - w) * self.h_bar + w * (self.target - accept_stat)
        log_eps = self.mu - np.sqrt(m) / self.gamma * self.h_bar
        eta = m ** (-self.kappa)
        self.log_eps_bar = eta * log_eps + (1 - eta) * self.log_eps_bar
        return float(np.exp(log_eps))

    @property
    def final(self):
        return float(np.exp(self.log_eps_bar))


def _metric_windows(warmup: int) -> list[int]:
    """End iterations of slow adaptation windows (Stan-like schedule)."""
    init, term, base = 75, 50, 25
    if warmup < 20:
        return []
    if init + term + base > warmup:
        init, term = int(0.15 * warmup), int(0.1 * warmup)
        base = warmup - init - term
    ends = []
    start, size = init, base
    while True:
        end = start + size
        next_end = end + 2 * size
        if next_end > warmup - term:
            ends.append(warmup - term)
            break
        ends.append(end)
        start, size = end, 2 * size
    return ends


def run_chain(logp_grad, q0, config: SamplerConfig, rng):
    """One chain; returns retained unconstrained states and per-iteration stats."""
    target = _Target(logp_grad)
    q = np.asarray(q0, dtype=float)
    lp, g = target(q)
    if not np.isfinite(lp):
        raise SamplerError("log posterior is not finite at the initial point")
    inv_metric = np.ones(q.size)
    eps = _find_reasonable_eps(target, q, lp, g, inv_metric, rng)
    da = _DualAveraging(eps, config.target_accept)
    windows = set(_metric_windows(config.warmup)) if config.adapt_metric else set()
    window_draws: list[np.ndarray] = []
    kept, kept_lp = [], []
    accept_stats, divergences, depths = [], 0, []
    for it in range(config.iterations):
        q, lp, g, acc, depth, div = nuts_transition(target, q, lp, g, eps, inv_metric, rng, config.max_treedepth)
        if it < config.warmup:
            eps = da.update(acc)
            if windows:
                window_draws.append(q.copy())
                if it + 1 in windows:
                    w = np.asarray(window_draws)
                    nw = w.shape[0]
                    if nw >= 5:
                        var = w.var(axis=0, ddof=1)
                        # regularize toward unit scale
                        inv_metric = (nw / (nw + 5.0)) * var + 1e-3 * (5.0 / (nw + 5.0))
                    window_draws = []
                    eps = _find_reasonable_eps(target, q, lp, g, inv_metric, rng)
                    da.restart(eps)
            if it + 1 == config.warmup:
                eps = da.final
        else:
            accept_stats.append(acc)
            divergences += int(div)
            depths.append(depth)
            if (it - config.warmup) % config.thin == 0:
                kept.append(q.copy())
                kept_lp.append(lp)
    stats = {
        "step_size": float(eps),
        "inv_metric": inv_metric.tolist(),
        "mean_accept": float(np.mean(accept_stats)) if accept_stats else float("nan"),
        "divergences": int(divergences),
        "mean_treedepth": float(np.mean(depths)) if depths else float("nan"),
        "gradient_evals": target.n_evals,
    }
    return np.asarray(kept).reshape(-1, q.size), np.asarray(kept_lp), stats


def sample_target(logp_grad, init_fn, config: SamplerConfig):
    """Run ``config.chains`` independent chains on an arbitrary target.

    ``init_fn(rng)`` returns an initial unconstrained state. Chains use
    independent streams spawned from ``config.seed``.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)

    def one(ss):
        rng = np.random.default_rng(ss)
        return run_chain(logp_grad, init_fn(rng), config, rng)

    if config.n_jobs != 1 and config.chains > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=config.n_jobs)(delayed(one)(s) for s in seeds)
    else:
        results = [one(s) for s in seeds]
    return results


def hmc_sample(model: ModelSpec, data, config: SamplerConfig, keep_pointwise: bool = True) -> PosteriorDraws:
    """Posterior draws of the model parameters (and latents, if sampled)."""
    if config.kept_per_chain < 1:
        raise SamplerError("no post-warm-up iterations: increase iterations beyond warmup")
    post = Posterior(model, data)
    t0 = time.perf_counter()
    results = sample_target(post.logp_grad, post.initial_point, config)
    states = np.concatenate([r[0] for r in results], axis=0)
    logdens = np.concatenate([r[1] for r in results])
    chain = np.repeat(np.arange(config.chains), [r[0].shape[0] for r in results])
    stats = [r[2] for r in results]
    return assemble_draws(post, states, logdens, chain, stats, config, keep_pointwise, time.perf_counter() - t0)


def assemble_draws(post: Posterior, states, logdens, chain, stats, config, keep_pointwise=True, wall=0.0):
    lay = post.layout
    vals = [lay.constrain(s) for s in states]
    draws = np.array([lay.param_vector(v) for v in vals]).reshape(len(vals), -1)
    derived_rows = [post.derived(v) for v in vals]
    derived = {k: np.array([d[k] for d in derived_rows]) for k in (derived_rows[0] if derived_rows else {})}
    pointwise = None
    if keep_pointwise:
        pointwise = np.array([post.pointwise_loglik(s) for s in states])
    latent = None
    if post.model.latent:
        rows = [post.latent_summary(s) for s in states]
        latent = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    out = PosteriorDraws(
        param_names=lay.param_names,
        draws=draws,
        chain=np.asarray(chain),
        logdens=np.asarray(logdens),
        states=np.asarray(states),
        pointwise_ll=pointwise,
        obs_ids=post.observation_ids(),
        derived=derived,
        latent_draws=latent,
        sampler={"config": asdict(config) if isinstance(config, SamplerConfig) else config, "chains": stats, "wall_seconds": wall},
    )
    if out.n_draws >= 4 * max(out.n_chains, 1):
        out.diagnostics = compute_diagnostics(out)
    total_div = sum(s["divergences"] for s in stats)
    kept = sum(len(range(config.warmup, config.iterations)) for _ in stats) if isinstance(config, SamplerConfig) else 0
    if kept and total_div / kept > 0.1:
        msg = f"{total_div} divergent transitions after warm-up ({100 * total_div / kept:.1f}%)"
        out.warnings.append(msg)
        log.warning(msg)
    for k, s in enumerate(stats):
        if s["mean_accept"] == 0:
            raise SamplerError(f"chain {k} rejected every proposal")
    return out
