import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_condition, loop_joint_cov, mvn_logpdf
from xgp._linalg import NumericalError, cholesky
from xgp.gp import (
    GaussianDist,
    ObservationNoise,
    condition,
    log_marginal_y,
    log_marginal_y_grad,
    posterior_m,
    posterior_x,
    predictive,
    sample_gaussian,
    sequential_loglik,
)
from xgp.kernels import (
    CovStructure,
    KernelSpec,
    Structure,
    TimeGrid,
    VarianceParams,
    assemble_joint_cov,
    stacked_index,
    variant_param_names,
    variant_structure,
)

VARIANTS = ["iBM", "xBM", "mxBM", "iEQ", "xEQ", "mxEQ"]


def x_bm(sm=1.0, sx=1.0):
    return CovStructure(Structure.EXCHANGEABLE, KernelSpec.bm(), VarianceParams(sm, (sx,)), KernelSpec.bm())


def rand_struct(variant, p, rng):
    names = variant_param_names(variant, p)
    return variant_structure(variant, {n: float(v) for n, v in zip(names, rng.uniform(0.4, 2.0, len(names)))}, p)


# -- types ----------------------------------------------------------------------


def test_gaussian_dist_validation():
    with pytest.raises(ValueError):
        GaussianDist([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ValueError):
        GaussianDist([0.0], np.eye(2))
    with pytest.raises(ValueError):
        ObservationNoise(-0.1)


# -- marginal likelihood ------------------------------------------------------------


def test_log_marginal_scalar_example():
    v = log_marginal_y([0.0], x_bm(), TimeGrid([1.0]), 1, ObservationNoise(1.0))
    assert v == pytest.approx(-0.5 * np.log(2 * np.pi * 3), abs=1e-12)


def test_log_marginal_maximized_at_zero(rng):
    s, grid, noise = x_bm(0.8, 0.6), TimeGrid([1.0, 2.0, 3.0]), ObservationNoise(0.3)
    best = log_marginal_y(np.zeros(6), s, grid, 2, noise)
    for _ in range(20):
        assert log_marginal_y(rng.normal(size=6), s, grid, 2, noise) < best


@pytest.mark.parametrize("variant", VARIANTS)
def test_log_marginal_matches_dense_oracle(variant, rng):
    p, grid = 2, TimeGrid([0.5, 1.5, 3.0])
    s = rand_struct(variant, p, rng)
    y = rng.normal(size=6)
    noise = ObservationNoise(0.4)
    cov = assemble_joint_cov(s, grid, p) + 0.16 * np.eye(6)
    assert log_marginal_y(y, s, grid, p, noise) == pytest.approx(mvn_logpdf(y, cov), abs=1e-8)


def test_log_marginal_handles_missing(rng):
    s, grid, noise = x_bm(), TimeGrid([1.0, 2.0, 3.0]), ObservationNoise(0.5)
    y = rng.normal(size=6)
    y[[1, 4]] = np.nan
    keep = ~np.isnan(y)
    cov = assemble_joint_cov(s, grid, 2)[np.ix_(keep, keep)] + 0.25 * np.eye(4)
    assert log_marginal_y(y, s, grid, 2, noise) == pytest.approx(mvn_logpdf(y[keep], cov), abs=1e-10)


def test_sequential_loglik_sums_to_marginal(rng):
    s, grid, noise = rand_struct("mxEQ", 3, rng), TimeGrid([1.0, 2.0, 4.0, 5.0]), ObservationNoise(0.3)
    y = rng.normal(size=12)
    y[5] = np.nan
    terms = sequential_loglik(y, s, grid, 3, noise)
    assert np.isnan(terms[5])
    assert np.nansum(terms) == pytest.approx(log_marginal_y(y, s, grid, 3, noise), abs=1e-10)


@pytest.mark.parametrize("variant", VARIANTS)
def test_log_marginal_gradient_finite_differences(variant, rng):
    p, grid = 3, TimeGrid([1.0, 2.0, 3.5, 4.0])
    names = variant_param_names(variant, p)
    params = {n: float(v) for n, v in zip(names, rng.uniform(0.5, 2.0, len(names)))}
    y = rng.normal(size=p * grid.n)
    sy = 0.7

    def f(pr, sigma_y):
        return log_marginal_y(y, variant_structure(variant, pr, p), grid, p, ObservationNoise(sigma_y))

    _, g = log_marginal_y_grad(y, variant_structure(variant, params, p), grid, p, ObservationNoise(sy))
    h = 1e-5
    for n in names:
        fd = (f(dict(params, **{n: params[n] + h}), sy) - f(dict(params, **{n: params[n] - h}), sy)) / (2 * h)
        assert g[n] == pytest.approx(fd, rel=1e-4, abs=1e-7)
    fd = (f(params, sy + h) - f(params, sy - h)) / (2 * h)
    assert g["sigma_y"] == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_factorization_failure_reports_jitters():
    a = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NumericalError) as info:
        cholesky(a)
    assert len(info.value.jitters) >= 3


# -- latent posterior ---------------------------------------------------------------


def test_posterior_x_limits(rng):
    s, grid = x_bm(0.9, 0.7), TimeGrid([1.0, 2.0, 3.0])
    y = rng.normal(size=6)
    vague = posterior_x(y, s, grid, 2, ObservationNoise(1e6))
    np.testing.assert_allclose(vague.mean, 0.0, atol=1e-6)
    np.testing.assert_allclose(vague.cov, assemble_joint_cov(s, grid, 2), atol=1e-6)
    sharp = posterior_x(y, s, grid, 2, ObservationNoise(1e-6))
    np.testing.assert_allclose(sharp.mean, y, atol=1e-6)


@pytest.mark.parametrize("variant", VARIANTS)
def test_posterior_x_matches_joint_conditioning(variant, rng):
    p, grid = 2, TimeGrid([0.5, 1.0, 2.0])
    s = rand_struct(variant, p, rng)
    y = rng.normal(size=6)
    sy2 = 0.3**2
    k = assemble_joint_cov(s, grid, p)
    joint = np.block([[k, k], [k, k + sy2 * np.eye(6)]])
    mean, cov = brute_condition(joint, np.arange(6, 12), np.arange(6), y)
    d = posterior_x(y, s, grid, p, ObservationNoise(0.3))
    np.testing.assert_allclose(d.mean, mean, atol=1e-8)
    np.testing.assert_allclose(d.cov, cov, atol=1e-8)
    assert np.linalg.eigvalsh(d.cov).min() >= -1e-8


# -- mean-process posterior ----------------------------------------------------------


def test_posterior_m_scalar_example():
    s = x_bm(1.0, 1.0)
    d = posterior_m(np.array([[1.0], [3.0]]), s, TimeGrid([1.0]), 2)
    assert d.mean[0] == pytest.approx(4.0 / 3.0, abs=1e-12)
    assert d.cov[0, 0] == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_posterior_m_zero_data():
    s = x_bm(1.2, 0.4)
    d = posterior_m(np.zeros((3, 4)), s, TimeGrid([1.0, 2.0, 3.0, 4.0]), 3)
    np.testing.assert_allclose(d.mean, 0.0, atol=1e-14)


@pytest.mark.parametrize("variant", ["xBM", "xEQ", "mxBM", "mxEQ"])
@pytest.mark.parametrize("p", [1, 3])
def test_posterior_m_matches_joint_conditioning(variant, p, rng):
    grid = TimeGrid([1.0, 2.0, 3.0])
    n = grid.n
    s = rand_struct(variant, p, rng)
    cm = s.sigma_mu**2 * np.array([[s.mean_kernel(a, b) for b in grid.times] for a in grid.times])
    # joint covariance of (M, X_1..X_p)
    blocks = [[cm] + [cm] * p]
    for i in range(p):
        ci = s.task_sigma(i) ** 2 * np.array([[s.task_kernel_for(i)(a, b) for b in grid.times] for a in grid.times])
        blocks.append([cm] + [cm + (ci if j == i else 0.0) for j in range(p)])
    joint = np.block(blocks)
    x = rng.normal(size=(p, n))
    mean, cov = brute_condition(joint, np.arange(n, n * (p + 1)), np.arange(n), x.ravel())
    d = posterior_m(x, s, grid, p)
    np.testing.assert_allclose(d.mean, mean, atol=1e-8)
    np.testing.assert_allclose(d.cov, cov, atol=1e-8)


def test_posterior_m_rejects_independent():
    s = CovStructure(Structure.INDEPENDENT, KernelSpec.bm(), VarianceParams(0.0, (1.0,)))
    with pytest.raises(ValueError):
        posterior_m(np.zeros((2, 1)), s, TimeGrid([1.0]), 2)


# -- predictive ---------------------------------------------------------------------


def test_predictive_interpolates_observation(rng):
    s, grid = x_bm(), TimeGrid([1.0, 2.0, 3.0])
    y = rng.normal(size=6)
    d = predictive(TimeGrid([2.0]), [1], y, s, grid, 2, ObservationNoise(1e-6))
    assert d.mean[0] == pytest.approx(y[4], abs=1e-4)


def test_predictive_unseen_task_without_shared_component(rng):
    s, grid = x_bm(0.0, 1.3), TimeGrid([1.0, 2.0])
    y = rng.normal(size=4)
    star = TimeGrid([1.5, 3.0])
    d = predictive(star, [2], y, s, grid, 2, ObservationNoise(0.2), include_obs_noise=False)
    np.testing.assert_allclose(d.mean, 0.0, atol=1e-14)
    prior = 1.69 * np.minimum.outer(star.times, star.times)
    np.testing.assert_allclose(d.cov, prior, atol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("obs_noise", [True, False])
def test_predictive_matches_joint_conditioning(variant, obs_noise, rng):
    p, grid = 2, TimeGrid([1.0, 2.0, 3.0])
    s = rand_struct(variant, p, rng)
    y = rng.normal(size=6)
    sy = 0.25
    tasks, times = stacked_index(grid, p)
    st_tasks, st_times = np.array([0, 1]), np.array([4.0, 4.0])
    all_t = np.concatenate([tasks, st_tasks])
    all_s = np.concatenate([times, st_times])
    k = np.array([[_k(s, a, b, u, v) for b, v in zip(all_t, all_s)] for a, u in zip(all_t, all_s)])
    k[:6, :6] += sy**2 * np.eye(6)
    if obs_noise:
        k[6:, 6:] += sy**2 * np.eye(2)
    mean, cov = brute_condition(k, np.arange(6), np.arange(6, 8), y)
    d = predictive(TimeGrid([4.0]), [0, 1], y, s, grid, p, ObservationNoise(sy), include_obs_noise=obs_noise)
    np.testing.assert_allclose(d.mean, mean, atol=1e-8)
    np.testing.assert_allclose(d.cov, cov, atol=1e-8)
    assert np.linalg.eigvalsh(d.cov).min() >= -1e-8


def _k(s, i, j, t, u):
    from xgp.kernels import multitask_kernel

    return multitask_kernel(int(i), int(j), float(t), float(u), s)


# -- sampling -----------------------------------------------------------------------


def test_sample_zero_cov_returns_mean():
    d = GaussianDist([1.0, -2.0], np.zeros((2, 2)))
    np.testing.assert_array_equal(sample_gaussian(d, 5, 0), np.tile([1.0, -2.0], (5, 1)))


def test_sample_covariance_monte_carlo():
    cov = np.array([[2.0, 1.0], [1.0, 2.0]])
    x = sample_gaussian(GaussianDist([0.0, 0.0], cov), 100_000, 7)
    np.testing.assert_allclose(np.cov(x.T), cov, rtol=0.05)


def test_sample_deterministic():
    d = GaussianDist([0.0, 1.0], [[1.0, 0.3], [0.3, 1.0]])
    np.testing.assert_array_equal(sample_gaussian(d, 10, 42), sample_gaussian(d, 10, 42))
    with pytest.raises(ValueError):
        sample_gaussian(d, 0, 1)


# -- properties ---------------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(VARIANTS), st.integers(1, 4), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_posterior_and_predictive_match_brute_force(variant, p, n, seed):
    if n * p > 32:
        return
    rng = np.random.default_rng(seed)
    grid = TimeGrid(np.cumsum(rng.uniform(0.3, 1.5, n)))
    s = rand_struct(variant, p, rng)
    sy = float(rng.uniform(0.2, 1.0))
    y = rng.normal(size=n * p)
    k = assemble_joint_cov(s, grid, p)
    joint = np.block([[k, k], [k, k + sy**2 * np.eye(n * p)]])
    mean, cov = brute_condition(joint, np.arange(n * p, 2 * n * p), np.arange(n * p), y)
    d = posterior_x(y, s, grid, p, ObservationNoise(sy))
    assert np.max(np.abs(d.mean - mean)) < 1e-8
    assert np.max(np.abs(d.cov - cov)) < 1e-8


def test_condition_helper_matches_explicit_inverse(rng):
    a = rng.normal(size=(5, 5))
    joint = a @ a.T + np.eye(5)
    y = rng.normal(size=3)
    mean, cov = brute_condition(joint, [0, 1, 2], [3, 4], y)
    d = condition(joint[:3, :3], joint[3:, :3], joint[3:, 3:], y)
    np.testing.assert_allclose(d.mean, mean, atol=1e-10)
    np.testing.assert_allclose(d.cov, cov, atol=1e-10)


def test_loop_oracle_agrees_with_assembly(rng):
    s = x_bm(0.5, 1.5)
    grid = TimeGrid([1.0, 2.0])
    tasks, times = stacked_index(grid, 2)
    ref = loop_joint_cov(tasks, times, s.kind, 0.5, (1.5, 1.5), min, (min, min))
    np.testing.assert_allclose(assemble_joint_cov(s, grid, 2), ref, atol=1e-14)
