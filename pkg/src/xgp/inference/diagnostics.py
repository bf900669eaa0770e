"""Convergence diagnostics: split-Rhat and autocorrelation-based ESS."""

from __future__ import annotations

import numpy as np


def _split(chains: np.ndarray) -> np.ndarray:
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    n = chains.shape[1]
    half = n // 2
    if half < 2:
        raise ValueError("need at least 4 draws per chain")
    return np.concatenate([chains[:, :half], chains[:, n - half :]], axis=0)


def split_rhat(chains) -> float:
    """Potential scale reduction on split chains; input shape (chains, draws).

    Returns NaN when fewer than two chains are supplied.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    if chains.shape[0] < 2:
        return float("nan")
    x = _split(chains)
    m, n = x.shape
    means = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else float("inf")
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    m, n = x.shape
    xc = x - x.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, size, axis=1)
    ac = np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n]
    return ac / n


def ess(chains) -> float:
    """Effective sample size combining chains (Geyer initial monotone sequence)."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    x = _split(chains) if chains.shape[1] >= 4 else chains
    m, n = x.shape
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1.0)
    w = chain_var.mean()
    var_plus = w * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return float(m * n)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Sum consecutive pairs while positive, enforcing monotonicity.
    pairs = []
    t = 0
    while t + 1 < n:
        s = rho[t] + rho[t + 1]
        if s < 0:
            break
        pairs.append(s)
        t += 2
    pairs = np.minimum.accumulate(np.asarray(pairs)) if pairs else np.array([1.0])
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def mcse_mean(chains) -> float:
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    return float(chains.std(ddof=1) / np.sqrt(ess(chains)))


def diagnostics(draws) -> dict[str, dict[str, float]]:
    """Per-parameter ESS and split-Rhat for a :class:`PosteriorDraws`."""
    out = {}
    chains = draws.by_chain()
    for k, name in enumerate(draws.param_names):
        x = chains[:, :, k]
        out[name] = {
            "ess": ess(x) if x.shape[1] >= 4 else float("nan"),
            "rhat": split_rhat(x) if x.shape[1] >= 4 else float("nan"),
        }
    for name, vals in draws.derived.items():
        x = vals.reshape(chains.shape[0], chains.shape[1])
        out[name] = {
            "ess": ess(x) if x.shape[1] >= 4 else float("nan"),
            "rhat": split_rhat(x) if x.shape[1] >= 4 else float("nan"),
        }
    return out
