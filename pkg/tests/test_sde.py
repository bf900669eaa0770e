import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xgp.kernels import TimeGrid
from xgp.sde import ExchangeableDiffusion, bm_increment, euler_maruyama, exchangeable_chol, exchangeable_cov


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_chol_reconstructs_covariance(p, sm, sx):
    if sm**2 + sx**2 < 1e-6:
        return
    low = exchangeable_chol(p, sm, sx)
    assert np.allclose(np.triu(low, 1), 0.0)
    np.testing.assert_allclose(low @ low.T, exchangeable_cov(p, sm, sx), atol=1e-12 * max(1.0, sm**2 + sx**2))


def test_chol_examples():
    assert exchangeable_chol(1, 0.6, 0.8)[0, 0] == pytest.approx(1.0)
    low = exchangeable_chol(2, 1.0, 1.0)
    np.testing.assert_allclose(low @ low.T, [[2.0, 1.0], [1.0, 2.0]], atol=1e-12)
    np.testing.assert_allclose(exchangeable_chol(3, 0.0, 0.7), 0.7 * np.eye(3), atol=1e-15)
    with pytest.raises(ValueError):
        exchangeable_chol(0, 1.0, 1.0)
    with pytest.raises(ValueError):
        exchangeable_chol(2, 0.0, 0.0)


def test_diffusion_validation():
    with pytest.raises(ValueError):
        ExchangeableDiffusion(0, 1.0, 1.0)
    with pytest.raises(ValueError):
        ExchangeableDiffusion(2, -1.0, 1.0)


def test_increment_scaling_small_delta():
    diff = ExchangeableDiffusion(2, 0.6, 0.8)
    z = bm_increment(diff, 1e-4, 3, size=10_000)
    assert z[:, 0].std() == pytest.approx(0.01, rel=0.1)


def test_increment_rank_one_noise():
    z = bm_increment(ExchangeableDiffusion(4, 1.3, 0.0), 0.5, 1, size=100)
    assert np.all(z == z[:, :1])


def test_increment_covariance_monte_carlo():
    diff = ExchangeableDiffusion(3, 0.9, 0.5)
    z = bm_increment(diff, 0.3, 11, size=100_000)
    target = exchangeable_cov(3, 0.9, 0.5) * 0.3
    emp = np.cov(z.T)
    assert np.max(np.abs(emp - target) / target) < 0.05
    # exchangeability: all off-diagonal entries agree
    off = emp[~np.eye(3, dtype=bool)]
    assert off.max() - off.min() < 0.01
    with pytest.raises(ValueError):
        bm_increment(diff, 0.0, 1)


def test_euler_maruyama_common_path():
    path = euler_maruyama(ExchangeableDiffusion(3, 1.0, 0.0), 0.0, TimeGrid(np.linspace(0, 1, 51)), 5)
    assert path.states.shape == (51, 3)
    assert np.all(path.states == path.states[:, :1])


def test_euler_maruyama_ode_limit():
    diff = ExchangeableDiffusion(2, 0.0, 0.0, drift=lambda x: -x)
    grid = TimeGrid(np.linspace(0, 1, 1001))
    path = euler_maruyama(diff, 1.0, grid, 0)
    assert np.max(np.abs(path.states[-1] - np.exp(-1.0))) <= 0.01


def test_euler_maruyama_reproducible_and_nonfinite_drift():
    diff = ExchangeableDiffusion(2, 0.5, 0.5)
    grid = TimeGrid(np.linspace(0, 2, 21))
    a = euler_maruyama(diff, 0.0, grid, 9).states
    np.testing.assert_array_equal(a, euler_maruyama(diff, 0.0, grid, 9).states)
    bad = ExchangeableDiffusion(2, 0.5, 0.5, drift=lambda x: np.full(2, np.nan))
    with pytest.raises(FloatingPointError, match="step 0"):
        euler_maruyama(bad, 0.0, grid, 1)


def test_terminal_covariance_monte_carlo():
    p, sm, sx, T = 3, 0.8, 0.6, 2.0
    diff = ExchangeableDiffusion(p, sm, sx)
    grid = TimeGrid(np.linspace(0, T, 11))
    ends = np.array([euler_maruyama(diff, 0.0, grid, s).states[-1] for s in range(10_000)])
    target = exchangeable_cov(p, sm, sx) * T
    assert np.max(np.abs(np.cov(ends.T) - target) / target) < 0.07


def test_disjoint_increments_uncorrelated():
    diff = ExchangeableDiffusion(2, 0.7, 0.7)
    a = bm_increment(diff, 0.5, 100, size=100_000)
    b = bm_increment(diff, 0.5, 101, size=100_000)
    assert abs(np.corrcoef(a[:, 0], b[:, 0])[0, 1]) < 0.02


def test_cumulative_increments_match_bm_kernel():
    # cov of cumulative sums of independent increments over an equidistant grid
    from xgp.kernels import CovStructure, KernelSpec, Structure, VarianceParams, assemble_joint_cov

    p, n, dt, sm, sx = 2, 4, 0.5, 0.9, 0.4
    grid = TimeGrid(dt * np.arange(1, n + 1))
    s = CovStructure(Structure.EXCHANGEABLE, KernelSpec.bm(), VarianceParams(sm, (sx,)), KernelSpec.bm())
    # X(t_k) = sum_{j<=k} dB_j, with cov(dB_j) = Sigma * dt
    cum = np.tril(np.ones((n, n)))
    inc_cov = np.kron(exchangeable_cov(p, sm, sx) * dt, np.eye(n))
    lift = np.kron(np.eye(p), cum)
    np.testing.assert_allclose(lift @ inc_cov @ lift.T, assemble_joint_cov(s, grid, p), atol=1e-12)
