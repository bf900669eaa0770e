"""Acceptance criteria, one test each.

Every test prints a single ``CRITERION k: PASS|FAIL`` line (visible without
``-s``) and then asserts, so the suite reports all ten even when one fails.
"""

import json
import time

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from conftest import brute_condition
from xgp import epimodels as epi
from xgp.cli import main
from xgp.gp import ObservationNoise, log_marginal_y, log_marginal_y_grad, posterior_m, posterior_x, predictive
from xgp.inference import GaussianData, ModelSpec, Posterior, SamplerConfig, hmc_sample
from xgp.kernels import (
    Structure,
    TimeGrid,
    assemble_joint_cov,
    cross_cov,
    gram,
    intra_class_rho,
    stacked_index,
    variant_param_names,
    variant_structure,
)
from xgp.scoring import ForecastEnsemble, PrequentialPlan, crps, prequential_run
from xgp.sde import ExchangeableDiffusion, euler_maruyama, exchangeable_cov
from xgp.simulate import simulate_chikv, simulate_covid, simulate_gaussian, simulate_latent

VARIANTS = ["iBM", "xBM", "mxBM", "iEQ", "xEQ", "mxEQ"]


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail

    return emit


def random_struct(variant, p, rng, lo=0.5, hi=2.0):
    names = variant_param_names(variant, p)
    return variant_structure(variant, {n: float(v) for n, v in zip(names, rng.uniform(lo, hi, len(names)))}, p)


# -- 1 -------------------------------------------------------------------------------


def test_criterion_1_oracle_equivalence(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst, cases = 0.0, 0
    for variant in VARIANTS:
        for p in (1, 2, 3, 4, 8):
            for n in (1, 2, 4, 8):
                if n * p > 32:
                    continue
                grid = TimeGrid(np.cumsum(rng.uniform(0.5, 1.5, n)))
                s = random_struct(variant, p, rng)
                sy = float(rng.uniform(0.3, 1.0))
                y = rng.normal(size=n * p)
                k = assemble_joint_cov(s, grid, p)
                N = n * p
                # latent paths given noisy data
                joint = np.block([[k, k], [k, k + sy**2 * np.eye(N)]])
                mean, cov = brute_condition(joint, np.arange(N, 2 * N), np.arange(N), y)
                d = posterior_x(y, s, grid, p, ObservationNoise(sy))
                worst = max(worst, np.abs(d.mean - mean).max(), np.abs(d.cov - cov).max())
                # predictive at two future times for every task, plus an unseen
                # task when task-level parameters are shared
                q = p + 1 if s.per_task_count is None else p
                star = TimeGrid(grid.times[-1] + np.array([0.7, 1.9]))
                st_tasks, st_times = stacked_index(star, q)
                ob_tasks, ob_times = stacked_index(grid, p)
                all_t = np.concatenate([ob_tasks, st_tasks])
                all_s = np.concatenate([ob_times, st_times])
                big = cross_cov(s, all_t, all_s, all_t, all_s)
                big[:N, :N] += sy**2 * np.eye(N)
                big[N:, N:] += sy**2 * np.eye(big.shape[0] - N)
                mean, cov = brute_condition(big, np.arange(N), np.arange(N, big.shape[0]), y)
                d = predictive(star, list(range(q)), y, s, grid, p, ObservationNoise(sy))
                worst = max(worst, np.abs(d.mean - mean).max(), np.abs(d.cov - cov).max())
                cases += 2
                if s.kind is Structure.INDEPENDENT:
                    continue
                # shared mean process given the task paths
                cm = s.sigma_mu**2 * gram(s.mean_kernel, grid)
                joint = np.block([[cm, np.tile(cm, p)], [np.tile(cm, (p, 1)), k]])
                x = rng.normal(size=(p, n))
                mean, cov = brute_condition(joint, np.arange(n, n + N), np.arange(n), x.ravel())
                d = posterior_m(x, s, grid, p)
                worst = max(worst, np.abs(d.mean - mean).max(), np.abs(d.cov - cov).max())
                cases += 1
    dt = time.perf_counter() - t0
    report(1, worst < 1e-8 and dt < 60, f"{cases} cases, max-abs {worst:.2e}, {dt:.1f}s")


# -- 2 -------------------------------------------------------------------------------


def test_criterion_2_marginalization(report):
    t0 = time.perf_counter()
    times = np.array([1.0, 2.0])
    x, _ = simulate_latent("xBM", {"sigma_mu": 1.0, "sigma_x": 1.0}, 2, times, 7, size=200_000)
    emp = np.cov(x.reshape(x.shape[0], -1).T)
    target = assemble_joint_cov(variant_structure("xBM", {"sigma_mu": 1.0, "sigma_x": 1.0}, 2), TimeGrid(times), 2)
    err = np.abs(emp - target).max()
    dt = time.perf_counter() - t0
    report(2, err < 0.05 and dt < 60, f"max-abs {err:.4f}, {dt:.1f}s")


# -- 3 -------------------------------------------------------------------------------


def test_criterion_3_kronecker_identity(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for variant in VARIANTS:
        for p in (1, 2, 3):
            for n in (1, 2, 5):
                grid = TimeGrid(0.5 * np.arange(1.0, n + 1.0))
                s = random_struct(variant, p, rng)
                kron = np.zeros((n * p, n * p))
                if s.kind is not Structure.INDEPENDENT:
                    kron += np.kron(np.ones((p, p)), s.sigma_mu**2 * gram(s.mean_kernel, grid))
                for i in range(p):
                    e = np.zeros((p, p))
                    e[i, i] = 1.0
                    kron += np.kron(e, s.task_sigma(i) ** 2 * gram(s.task_kernel_for(i), grid))
                worst = max(worst, np.abs(assemble_joint_cov(s, grid, p) - kron).max())
    report(3, worst <= 1e-12, f"max-abs {worst:.2e}")


# -- 4 -------------------------------------------------------------------------------


def _rel_err(g, fd):
    return np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(fd)))


def _fd(f, u, h=1e-6):
    out = np.empty_like(u)
    for k in range(u.size):
        e = np.zeros_like(u)
        e[k] = h
        out[k] = (f(u + e) - f(u - e)) / (2 * h)
    return out


def _epi_data(kind):
    rng = np.random.default_rng(4)
    if kind == "chikv_negbin":
        from xgp.inference import ChikvData

        cfg = epi.ChikvConfig(
            populations=[5000.0, 8000.0],
            precipitation=rng.uniform(0, 3, (2, 18)),
            initial_exposure=[3.0, 4.0],
            exposure_offset=1.0,
        )
        sim = simulate_chikv("xBM", {"sigma_mu": 0.2, "sigma_x": 0.1}, cfg, 10, [0.3, 0.2], np.zeros(9), 0.3, 1)
        return ChikvData(sim.counts, cfg)
    from xgp.inference import CovidData

    cfg = epi.RenewalConfig(
        populations=[2e5, 1e5],
        contact=[[1.5, 0.5], [0.4, 1.0]],
        ifr=[0.005, 0.02],
        gen_time=epi.discretize_gamma(6.5, 0.62, 30),
        inf_to_death=epi.discretize_gamma(10.0, 0.4, 30),
    )
    sim = simulate_covid("xBM", {"sigma_mu": 0.3, "sigma_x": 0.2}, cfg, 18, [-1.0, -1.2], 20.0, 0.2, 2)
    return CovidData(sim.counts, cfg)


def test_criterion_4_gradients(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    p, grid = 3, TimeGrid([1.0, 2.0, 3.5, 4.0, 6.0])
    worst, points = 0.0, 0
    posteriors = []
    for variant in VARIANTS:
        names = variant_param_names(variant, p)
        for _ in range(20):
            params = {n: float(v) for n, v in zip(names, rng.uniform(0.5, 2.0, len(names)))}
            sy = float(rng.uniform(0.3, 1.0))
            y = rng.normal(size=p * grid.n)
            theta = np.array([params[n] for n in names] + [sy])

            def f(v):
                return log_marginal_y(y, variant_structure(variant, dict(zip(names, v[:-1])), p), grid, p,
                                      ObservationNoise(v[-1]))

            _, g = log_marginal_y_grad(y, variant_structure(variant, params, p), grid, p, ObservationNoise(sy))
            worst = max(worst, _rel_err(np.array([g[n] for n in names] + [g["sigma_y"]]), _fd(f, theta, 1e-5)))
            points += 1
        sim = simulate_gaussian(variant, dict(zip(names, rng.uniform(0.5, 1.5, len(names)))), 2,
                                np.arange(1.0, 7.0), 0.3, seed=4)
        data = GaussianData(sim.y, TimeGrid(np.arange(1.0, 7.0)))
        posteriors += [Posterior(ModelSpec(variant, marginalize=m), data) for m in (True, False)]
        posteriors += [Posterior(ModelSpec(variant, lik), _epi_data(lik)) for lik in ("chikv_negbin", "covid_negbin")]
    posteriors.append(Posterior(ModelSpec("baseline", "chikv_negbin"), _epi_data("chikv_negbin")))
    for post in posteriors:
        for _ in range(20):
            u = post.initial_point(rng, shrink=0.3)
            _, g = post.logp_grad(u)
            worst = max(worst, _rel_err(g, _fd(post.logp, u)))
            points += 1
    dt = time.perf_counter() - t0
    report(4, worst < 1e-4, f"{points} points, max relative error {worst:.2e}, {dt:.1f}s")


# -- 5 -------------------------------------------------------------------------------


def test_criterion_5_calibration(report):
    t0 = time.perf_counter()
    truth = {"sigma_mu": 1.0, "sigma_x": 0.7}
    rho = intra_class_rho(truth["sigma_mu"], truth["sigma_x"])
    times = np.arange(1.0, 31.0)
    covered = []
    for r in range(20):
        sim = simulate_gaussian("xBM", truth, 3, times, 0.3, seed=500 + r)
        draws = hmc_sample(ModelSpec("xBM"), GaussianData(sim.y, TimeGrid(times)),
                           SamplerConfig(chains=2, iterations=400, seed=r))
        lo, hi = np.quantile(draws.param("rho"), [0.025, 0.975])
        covered.append(lo <= rho <= hi)
    dt = time.perf_counter() - t0
    hits = int(np.sum(covered))
    report(5, hits >= 16 and dt < 1800, f"rho={rho:.3f} covered in {hits}/20 replicates, {dt:.0f}s")


# -- 6 -------------------------------------------------------------------------------


def test_criterion_6_prequential_dominance(report):
    t0 = time.perf_counter()
    truth = {"sigma_mu": 1.0, "ell_mu": 4.0, "sigma_x": 0.5, "ell_x": 4.0}
    n = 30
    times = np.arange(1.0, n + 1.0)
    models = {"iEQ": ModelSpec("iEQ"), "xEQ": ModelSpec("xEQ")}
    plan = PrequentialPlan(initial_train_end=n - 8, n_steps=8)
    wins, margins = 0, []
    for r in range(10):
        sim = simulate_gaussian("xEQ", truth, 3, times, 0.2, seed=100 + r)
        res = prequential_run(models, GaussianData(sim.y, TimeGrid(times)), plan,
                              SamplerConfig(chains=2, iterations=300, seed=r), seed=r, per_draw=2)
        c = res.pooled.loc["CRPS"]
        wins += int(c["xEQ"] <= c["iEQ"])
        margins.append(c["iEQ"] - c["xEQ"])
    dt = time.perf_counter() - t0
    report(6, wins >= 7 and dt < 3600,
           f"xEQ CRPS <= iEQ in {wins}/10 runs, mean margin {np.mean(margins):.3f}, {dt:.0f}s")


# -- 7 -------------------------------------------------------------------------------


def test_criterion_7_score_oracles(report):
    x = np.random.default_rng(7).standard_normal(100_000)
    _, c = crps(ForecastEnsemble(x[:, None], [0.0]))
    target = (np.sqrt(2) - 1) / np.sqrt(np.pi)
    ok = abs(c - target) <= 0.005
    detail = [f"CRPS {c:.5f} vs {target:.5f}"]
    rng = np.random.default_rng(8)
    for d, phi in [(5.0, 0.5), (50.0, 2.0), (200.0, 0.1)]:
        y = epi.negbin_sample(np.full(200_000, d), phi, rng)
        m_err = abs(y.mean() / d - 1)
        v_err = abs(y.var(ddof=1) / (d * (1 + phi)) - 1)
        ok &= m_err < 0.05 and v_err < 0.10
        detail.append(f"NB(d={d:g},phi={phi:g}) mean err {m_err:.3f} var err {v_err:.3f}")
    report(7, bool(ok), "; ".join(detail))


# -- 8 -------------------------------------------------------------------------------


def test_criterion_8_epidemic_conservation(report):
    rng = np.random.default_rng(8)
    over = 0.0
    for _ in range(50):
        A = int(rng.integers(1, 5))
        cfg = epi.RenewalConfig(
            populations=rng.uniform(100, 5000, A),
            contact=rng.uniform(0, 5, (A, A)),
            ifr=rng.uniform(0, 0.05, A),
            gen_time=epi.discretize_gamma(3.0, 0.5, 15),
            seed_infections=rng.uniform(1, 50, A),
        )
        inf = epi.renewal_infections(rng.uniform(0, 3, (A, 80)), cfg)
        over = max(over, np.max(inf.sum(axis=1) / cfg.populations))
    c, n = 1.3, 1e5
    cfg = epi.RenewalConfig([n], [[c]], [0.0], gen_time=[1.0], inf_to_death=[1.0], seed_infections=3.0, seed_days=1)
    beta = np.linspace(0.6, 1.1, 50)[None]
    inf = epi.renewal_infections(beta, cfg)[0]
    ref = [3.0]
    for t in range(1, 50):
        ref.append(max(0.0, 1 - sum(ref) / n) * beta[0, t] * c * ref[-1])
    rec_err = np.max(np.abs(inf - ref) / np.maximum(1.0, np.abs(ref)))
    g = epi.discretize_gamma(6.5, 0.62, 70)
    mass, mean = g.sum(), np.sum(np.arange(1, 71) * g) / g.sum()
    ok = over <= 1 + 1e-12 and rec_err <= 1e-10 and mass >= 0.999 and abs(mean - 6.5) <= 0.2
    report(8, bool(ok),
           f"max attack fraction {over:.6f}, recursion err {rec_err:.1e}, gamma mass {mass:.5f} mean {mean:.3f}")


# -- 9 -------------------------------------------------------------------------------


def test_criterion_9_sde(report):
    p, sm, sx, T = 3, 0.8, 0.6, 2.0
    grid = TimeGrid(np.linspace(0, T, 11))
    diff = ExchangeableDiffusion(p, sm, sx)
    ends = np.array([euler_maruyama(diff, 0.0, grid, s).states[-1] for s in range(10_000)])
    target = exchangeable_cov(p, sm, sx) * T
    rel = np.max(np.abs(np.cov(ends.T) - target) / target)
    common = all(
        np.all(path.states == path.states[:, :1])
        for path in (euler_maruyama(ExchangeableDiffusion(p, 1.1, 0.0), 0.0, grid, s) for s in range(20))
    )
    report(9, rel < 0.07 and common, f"terminal covariance max relative error {rel:.3f}, sigma_x=0 common={common}")


# -- 10 ------------------------------------------------------------------------------


def _invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args]).exit_code


def _yaml(path, body):
    path.write_text(yaml.safe_dump(body))
    return path


def _same(a, b, names):
    return all((a / f).read_bytes() == (b / f).read_bytes() for f in names)


def test_criterion_10_determinism_and_exit_codes(report, tmp_path):
    problems = []
    sim = _yaml(tmp_path / "sim.yaml", {"seed": 5, "simulate": {"kind": "gaussian", "variant": "xEQ", "p": 2, "T": 10,
                                                                 "sigma_y": 0.2, "params": {"sigma_mu": 1.0, "sigma_x": 0.5,
                                                                                            "ell_mu": 3.0, "ell_x": 3.0}}})
    for tag in ("a", "b"):
        if _invoke("simulate", "--config", sim, "--out", tmp_path / f"sim_{tag}"):
            problems.append("simulate failed")
    if not _same(tmp_path / "sim_a", tmp_path / "sim_b", ["series.csv", "latent_truth.csv"]):
        problems.append("simulate not reproducible")
    body = yaml.safe_load((tmp_path / "sim_a" / "fit.yaml").read_text())
    body.update(seed=6, sampler={"chains": 2, "iterations": 80},
                prequential={"models": ["iEQ", "xEQ"], "plan": {"initial_train_end": 8, "n_steps": 2}})
    fit = _yaml(tmp_path / "sim_a" / "run.yaml", body)
    for tag in ("a", "b"):
        out = tmp_path / f"fit_{tag}"
        if _invoke("fit", "--config", fit, "--out", out):
            problems.append("fit failed")
        pred = _yaml(tmp_path / f"pred_{tag}.yaml", {"seed": 7, "predict": {"run": str(out), "horizon": 3, "ensemble": True}})
        if _invoke("predict", "--config", pred, "--out", tmp_path / f"pred_{tag}"):
            problems.append("predict failed")
        if _invoke("prequential", "--config", fit, "--out", tmp_path / f"pq_{tag}"):
            problems.append("prequential failed")
    if not _same(tmp_path / "fit_a", tmp_path / "fit_b", ["draws.csv", "summary.csv", "pointwise_ll.csv", "plot_data.csv"]):
        problems.append("fit not reproducible")
    if not _same(tmp_path / "pred_a", tmp_path / "pred_b", ["forecast.csv", "ensemble.csv"]):
        problems.append("predict not reproducible")
    if not _same(tmp_path / "pq_a", tmp_path / "pq_b", ["scores_cells.csv", "scores_pooled.csv", "scores_per_step.csv"]):
        problems.append("prequential not reproducible")

    # malformed inputs
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "cols.csv").write_text("task_id,time,val\na,1,0.5\n")
    (bad / "huge.csv").write_text("task_id,time,value\n" + "".join(f"a,{t},{1e200 if t == 2 else 0.1}\n" for t in range(1, 6)))
    cases = [
        ("fit", {"model": {"variant": "xBM", "bogus": 1}}, 2),
        ("fit", {"model": {"variant": "zBM"}}, 2),
        ("predict", {"predict": {"horizon": 2}}, 2),
        ("fit", {"data": {"series": "missing.csv"}}, 3),
        ("fit", {"data": {"series": "cols.csv"}}, 3),
        ("fit", {"data": {"series": "huge.csv"}, "sampler": {"chains": 1, "iterations": 20}}, 4),
    ]
    for k, (cmd, cfg_body, code) in enumerate(cases):
        out = bad / f"out{k}"
        got = _invoke(cmd, "--config", _yaml(bad / f"c{k}.yaml", cfg_body), "--out", out)
        err = out / "error.json"
        if got != code or not err.exists() or json.loads(err.read_text())["exit_code"] != code:
            problems.append(f"case {k} ({cmd}) exit {got}, expected {code}")
    (bad / "locked").mkdir()
    (bad / "locked" / ".lock").write_text("")
    if _invoke("simulate", "--config", sim, "--out", bad / "locked") != 2:
        problems.append("lock not honoured")
    report(10, not problems, "; ".join(problems) or "4 commands reproducible, 7 malformed inputs mapped to exit codes")
