"""Shared independent oracles for the test suite.

These deliberately avoid the package's own assembly code: covariances are
built by explicit loops over (task, time) pairs, and Gaussian conditioning
uses explicit matrix inverses.
"""

import numpy as np
import pytest

from xgp.kernels import Structure


def loop_kernel(i, j, t, s, kind, sigma_mu, sigmas, k_mu, k_tasks):
    """Covariance of task i at t with task j at s, one entry at a time."""
    v = 0.0
    if kind is not Structure.INDEPENDENT:
        v += sigma_mu**2 * k_mu(t, s)
    if i == j:
        v += sigmas[i] ** 2 * k_tasks[i](t, s)
    return v


def loop_joint_cov(tasks, times, *args):
    n = len(tasks)
    k = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            k[a, b] = loop_kernel(tasks[a], tasks[b], times[a], times[b], *args)
    return k


def brute_condition(k_joint, obs_idx, tgt_idx, y_obs):
    """Conditional of target indices given observed indices with explicit inverse."""
    koo = k_joint[np.ix_(obs_idx, obs_idx)]
    kto = k_joint[np.ix_(tgt_idx, obs_idx)]
    ktt = k_joint[np.ix_(tgt_idx, tgt_idx)]
    inv = np.linalg.inv(koo)
    return kto @ inv @ y_obs, ktt - kto @ inv @ kto.T


def mvn_logpdf(y, cov):
    """Dense multivariate normal log density (explicit inverse and slogdet)."""
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return -0.5 * (y @ np.linalg.inv(cov) @ y + logdet + y.size * np.log(2 * np.pi))


def bm(t, s):
    return min(t, s)


def eq(ell):
    return lambda t, s: np.exp(-((t - s) ** 2) / (2 * ell**2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
