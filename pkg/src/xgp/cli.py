"""Command-line front end: ``xgp fit|predict|prequential|simulate``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
Failures also leave ``error.json`` in the output directory.
"""

from __future__ import annotations

import dataclasses
import json
import os
import platform
import shutil
import sys
import time
from pathlib import Path

import click
import numpy as np
import pandas as pd
import scipy

from . import epimodels as epi
from ._linalg import NumericalError
from .config import RunConfig, load_config, load_dataset, materialize, parse_config, prior_echo
from .forecast import QUANTILES, ForecastError, chikv_forecast, covid_forecast, gaussian_forecast
from .inference.diagnostics import diagnostics as compute_diagnostics
from .inference.hmc import PosteriorDraws, SamplerError, hmc_sample
from .inference.latents import reconstruct_latents
from .inference.model import Likelihood
from .inference.optimize import OptimizationError
from .io import ConfigError, DataError, SeriesTable, TimeAxis, write_matrix_csv, write_series
from .scoring import PrequentialPlan, export_pointwise_ll, prequential_run
from .sde import ExchangeableDiffusion, euler_maruyama
from .simulate import simulate_chikv, simulate_covid, simulate_gaussian
from .kernels import TimeGrid

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_INTERNAL = 0, 2, 3, 4, 1
QCOLS = ("q2.5", "q25", "median", "q75", "q97.5")
VERSION = "0.1.0"


def _exit_code(err: BaseException) -> int:
    if isinstance(err, ConfigError):
        return EXIT_CONFIG
    if isinstance(err, (DataError, ForecastError)):
        return EXIT_DATA
    if isinstance(err, (NumericalError, SamplerError, OptimizationError, np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERIC
    return EXIT_INTERNAL


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_csv(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, float_format="%.17g")


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _versions() -> dict:
    return {"xgp": VERSION, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


class _Lock:
    """Exclusive lock file inside the output directory."""

    def __init__(self, out: Path):
        self.path = out / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"output directory {self.path.parent} is locked by another run ({self.path})") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def _run(command: str, config: str, seed: int | None, out: str | None, resume: bool) -> None:
    out_dir = Path(out) if out else Path("runs") / command
    code = EXIT_OK
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "error.json").unlink(missing_ok=True)
        cfg = load_config(config)
        if seed is not None:
            cfg.seed = seed
        with _Lock(out_dir), np.errstate(over="ignore", under="ignore"):
            COMMANDS[command](cfg, out_dir, resume)
    except Exception as err:  # noqa: BLE001 - mapped to the exit-code contract
        code = _exit_code(err)
        info = {"command": command, "error": type(err).__name__, "message": str(err), "exit_code": code}
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            _write_json(info, out_dir / "error.json")
        except OSError:
            pass
        click.echo(json.dumps(info), err=True)
    sys.exit(code)


# ---------------------------------------------------------------------------
# fit


def _draws_frame(draws: PosteriorDraws) -> pd.DataFrame:
    per_chain = np.concatenate([np.arange((draws.chain == c).sum()) for c in np.unique(draws.chain)])
    df = pd.DataFrame({"chain": draws.chain, "draw": per_chain, "lp": draws.logdens})
    for k, name in enumerate(draws.param_names):
        df[name] = draws.draws[:, k]
    for name, v in draws.derived.items():
        df[name] = v
    return df


def _summary_frame(draws: PosteriorDraws) -> pd.DataFrame:
    rows = []
    for name, s in draws.summary().items():
        d = draws.diagnostics.get(name, {})
        rows.append({"parameter": name, **s, "ess": d.get("ess", np.nan), "rhat": d.get("rhat", np.nan)})
    return pd.DataFrame(rows)


def _quantile_rows(quantity, arr, task_ids, time_labels):
    """Rows of per-cell posterior quantiles; ``arr`` is (draws, tasks, times) or (draws, times)."""
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, None, :]
        task_ids = ["mean"]
    q = np.nanquantile(arr, [0.025, 0.25, 0.5, 0.75, 0.975], axis=0)
    rows = []
    for i, task in enumerate(task_ids):
        for j, t in enumerate(time_labels):
            rows.append({"quantity": quantity, "task_id": task, "time": t, **{c: q[k, i, j] for k, c in enumerate(QCOLS)}})
    return rows


def _plot_frame(draws: PosteriorDraws, cfg: RunConfig, series: SeriesTable, data) -> pd.DataFrame:
    lat = draws.latent_draws or {}
    labels = [series.axis.label(t) for t in series.times]
    lik = Likelihood(cfg.model.likelihood)
    rows = []
    for key in ("x", "m", "beta", "expected", "infections", "r_eff"):
        if key not in lat:
            continue
        arr = np.asarray(lat[key], dtype=float)
        tl = labels
        if lik is Likelihood.COVID and key in ("x", "m"):
            stride = data.config.changepoint_stride
            tl = [labels[min(k * stride, len(labels) - 1)] for k in range(arr.shape[-1])]
        ok = np.all(np.isfinite(arr.reshape(arr.shape[0], -1)), axis=1)
        if ok.any():
            rows += _quantile_rows(key, arr[ok], series.task_ids, tl)
    return pd.DataFrame(rows, columns=["quantity", "task_id", "time", *QCOLS])


def cmd_fit(cfg: RunConfig, out: Path, resume: bool = False) -> None:
    t0 = time.perf_counter()
    ds = load_dataset(cfg)
    spec = cfg.model.spec()
    sampler = dataclasses.replace(cfg.sampler, seed=cfg.seed)
    draws = hmc_sample(spec, ds.data, sampler)
    lik = Likelihood(cfg.model.likelihood)
    if lik is Likelihood.GAUSSIAN and spec.marginalize and cfg.fit.reconstruct_latents:
        draws = reconstruct_latents(draws, spec, ds.data, seed=cfg.seed + 1)
    _write_csv(_draws_frame(draws), out / "draws.csv")
    _write_csv(_summary_frame(draws), out / "summary.csv")
    _write_json(
        {"parameters": draws.diagnostics, "sampler": draws.sampler, "warnings": draws.warnings},
        out / "diagnostics.json",
    )
    export_pointwise_ll(draws, out / "pointwise_ll.csv")
    _write_csv(_plot_frame(draws, cfg, ds.series, ds.data), out / "plot_data.csv")
    np.savez(
        out / "posterior.npz",
        states=draws.states,
        chain=draws.chain,
        logdens=draws.logdens,
        draws=draws.draws,
        param_names=np.array(draws.param_names),
    )
    _write_json(
        {
            "command": "fit",
            "seed": cfg.seed,
            "config": materialize(cfg),
            "priors": prior_echo(spec),
            "task_ids": ds.series.task_ids,
            "time_axis": ds.series.axis.to_dict(),
            "versions": _versions(),
            "wall_seconds": time.perf_counter() - t0,
            "warnings": draws.warnings,
            "outputs": ["draws.csv", "summary.csv", "diagnostics.json", "pointwise_ll.csv", "plot_data.csv", "posterior.npz"],
        },
        out / "manifest.json",
    )


# ---------------------------------------------------------------------------
# predict


def _load_run(run_dir: Path):
    mpath = run_dir / "manifest.json"
    if not mpath.exists():
        raise ConfigError(f"predict.run {run_dir} has no manifest.json (run `xgp fit` first)")
    manifest = json.loads(mpath.read_text())
    raw = dict(manifest["config"])
    base = raw.pop("base_dir", ".")
    cfg = parse_config(raw, base)
    npz = np.load(run_dir / "posterior.npz")
    draws = PosteriorDraws(
        param_names=[str(s) for s in npz["param_names"]],
        draws=npz["draws"],
        chain=npz["chain"],
        logdens=npz["logdens"],
        states=npz["states"],
    )
    return cfg, draws


def cmd_predict(cfg: RunConfig, out: Path, resume: bool = False) -> None:
    t0 = time.perf_counter()
    pc = cfg.predict
    if pc.run is None:
        raise ConfigError("predict.run (the fitted run directory) is required")
    if pc.horizon < 0:
        raise ConfigError("predict.horizon must be nonnegative")
    fit_cfg, draws = _load_run(cfg.path(pc.run))
    ds = load_dataset(fit_cfg)
    spec = fit_cfg.model.spec()
    series = ds.series
    lik = spec.likelihood
    seed = cfg.seed
    h = int(pc.horizon)
    if lik is Likelihood.GAUSSIAN:
        times = series.times
        step = float(np.min(np.diff(times))) if times.size > 1 else 1.0
        future = times[-1] + step * np.arange(1, h + 1)
        names = list(series.task_ids) if pc.tasks is None else [str(t) for t in pc.tasks]
        known = {t: k for k, t in enumerate(series.task_ids)}
        unseen = [t for t in names if t not in known]
        index = {**known, **{t: series.p + k for k, t in enumerate(unseen)}}
        tasks = np.repeat([index[t] for t in names], h)
        cells_t = np.tile(future, len(names))
        try:
            fc = gaussian_forecast(
                draws, spec, ds.data, tasks, cells_t, pc.per_draw, seed, pc.include_obs_noise, pc.max_draws
            )
        except ValueError as err:
            if isinstance(err, (NumericalError, ForecastError)):
                raise
            raise ConfigError(f"predict.tasks: {err}") from err
        id_of = {v: k for k, v in index.items()}
    elif lik is Likelihood.CHIKV:
        fc = chikv_forecast(draws, spec, ds.data, h, seed, config=ds.chikv_config, max_draws=pc.max_draws)
        id_of = dict(enumerate(series.task_ids))
    else:
        fc = covid_forecast(draws, spec, ds.data, h, seed, max_draws=pc.max_draws)
        id_of = dict(enumerate(series.task_ids))
    step = float(np.min(np.diff(series.times))) if series.times.size > 1 else 1.0
    if lik is Likelihood.GAUSSIAN:
        labels = [series.axis.label(t) for t in fc.times]
    else:
        # epidemic forecasts are indexed 1..T+h on the series step
        labels = [series.axis.label(series.times[0] + (t - 1) * step) for t in fc.times]
    q = fc.quantiles()
    df = pd.DataFrame(
        {
            "task_id": [id_of[int(k)] for k in fc.tasks],
            "time": labels,
            "mean": fc.samples.mean(axis=0) if fc.n_cells else np.zeros(0),
            **{c: q[k] for k, c in enumerate(QCOLS)},
        },
        columns=["task_id", "time", "mean", *QCOLS],
    )
    _write_csv(df, out / "forecast.csv")
    if pc.ensemble:
        cols = [f"{a}@{b}" for a, b in zip(df["task_id"], df["time"])]
        _write_csv(pd.DataFrame(fc.samples, columns=cols), out / "ensemble.csv")
    _write_json(
        {
            "command": "predict",
            "seed": seed,
            "config": materialize(cfg),
            "fitted_run": str(cfg.path(pc.run)),
            "ensemble_size": int(fc.samples.shape[0]),
            "versions": _versions(),
            "wall_seconds": time.perf_counter() - t0,
        },
        out / "manifest.json",
    )


# ---------------------------------------------------------------------------
# prequential


def cmd_prequential(cfg: RunConfig, out: Path, resume: bool = False) -> None:
    t0 = time.perf_counter()
    ds = load_dataset(cfg)
    pq = cfg.prequential
    variants = list(pq.models) or [cfg.model.variant]
    models = {v: cfg.model.spec(v) for v in variants}
    pl = pq.plan
    end = pl.initial_train_end
    if isinstance(end, str):
        end = float(ds.series.axis.to_model([end], column="prequential.plan.initial_train_end")[0])
    if Likelihood(cfg.model.likelihood) is not Likelihood.GAUSSIAN:
        # epidemic models work on the step index 1..T
        t = ds.series.times
        step = float(np.min(np.diff(t))) if t.size > 1 else 1.0
        end = (end - t[0]) / step + 1.0
    try:
        plan = PrequentialPlan(float(end), float(pl.step), float(pl.horizon), int(pl.n_steps))
    except ValueError as err:
        raise ConfigError(f"prequential.plan: {err}") from err
    cache = out / "cache"
    if not resume and cache.exists():
        shutil.rmtree(cache)
    sampler = dataclasses.replace(cfg.sampler, seed=cfg.seed)
    try:
        res = prequential_run(models, ds.data, plan, sampler, seed=cfg.seed, per_draw=pq.per_draw, resume_dir=cache, n_jobs=pq.n_jobs)
    except RuntimeError as err:
        raise NumericalError(str(err)) from err
    cells = res.cells.copy()
    cells["task"] = [ds.series.task_ids[int(k)] for k in cells["task"]]
    _write_csv(cells, out / "scores_cells.csv")
    _write_csv(res.per_step, out / "scores_per_step.csv")
    res.pooled.reset_index().to_csv(out / "scores_pooled.csv", index=False, float_format="%.17g")
    (out / "scores_table.txt").write_text(res.table_text() + "\n")
    _write_json(res.failures, out / "failures.json")
    _write_json(
        {
            "command": "prequential",
            "seed": cfg.seed,
            "config": materialize(cfg),
            "plan": dataclasses.asdict(plan),
            "versions": _versions(),
            "wall_seconds": time.perf_counter() - t0,
            "failures": res.failures,
        },
        out / "manifest.json",
    )
    click.echo(res.table_text())


# ---------------------------------------------------------------------------
# simulate


def _task_ids(sc, p: int) -> list[str]:
    ids = [str(t) for t in sc.task_ids] if sc.task_ids else [f"task{k + 1}" for k in range(p)]
    if len(ids) != p:
        raise ConfigError(f"simulate.task_ids has {len(ids)} entries for {p} tasks")
    return ids


def _fit_yaml(out: Path, body: dict) -> None:
    import yaml

    (out / "fit.yaml").write_text(yaml.safe_dump(body, sort_keys=False))


def cmd_simulate(cfg: RunConfig, out: Path, resume: bool = False) -> None:
    sc = cfg.simulate
    seed = cfg.seed
    truth: dict = {"kind": sc.kind}
    int_axis = TimeAxis("int")
    try:
        if sc.kind == "gaussian":
            ids = _task_ids(sc, sc.p)
            times = np.arange(1, sc.T + 1, dtype=float)
            sim = simulate_gaussian(sc.variant, sc.params, sc.p, times, sc.sigma_y, seed=seed)
            write_series(out / "series.csv", SeriesTable(ids, times, sim.y, int_axis))
            write_series(out / "latent_truth.csv", SeriesTable(ids, times, sim.x, int_axis))
            truth.update(variant=sc.variant, params=sc.params, sigma_y=sc.sigma_y, p=sc.p, T=sc.T)
            _fit_yaml(out, {"model": {"variant": sc.variant, "likelihood": "gaussian"}, "data": {"series": "series.csv"}})
        elif sc.kind == "chikv":
            pops = np.asarray(sc.populations if sc.populations is not None else [5e4] * sc.p, dtype=float)
            S = pops.size
            ids = _task_ids(sc, S)
            rng = np.random.default_rng([seed, 1])
            weeks = sc.T + epi.N_LAGS - 1 + sc.future_weeks
            precip = rng.gamma(2.0, sc.precipitation_mean / 2.0, size=(S, weeks))
            init = np.asarray(sc.initial_exposure if sc.initial_exposure is not None else [5.0] * S, dtype=float)
            conf = epi.ChikvConfig(pops, precip, init)
            x0 = np.zeros(S) if sc.x0 is None else np.asarray(sc.x0, dtype=float)
            lbp = np.zeros(epi.N_LAGS) if sc.log_beta_p is None else np.asarray(sc.log_beta_p, dtype=float)
            sim = simulate_chikv(sc.variant, sc.params, conf, sc.T, x0, lbp, sc.phi, seed=seed)
            times = np.arange(1, sc.T + 1, dtype=float)
            write_series(out / "series.csv", SeriesTable(ids, times, sim.counts, int_axis))
            ptimes = np.arange(1 - (epi.N_LAGS - 1), sc.T + sc.future_weeks + 1)
            rows = [(ids[s], int(t), _fmt(precip[s, k])) for s in range(S) for k, t in enumerate(ptimes)]
            pd.DataFrame(rows, columns=["task_id", "time", "value_cm"]).to_csv(out / "precipitation.csv", index=False)
            truth.update(
                variant=sc.variant, params=sc.params, populations=pops, x0=x0, log_beta_p=lbp, phi=sc.phi,
                initial_exposure=init, T=sc.T, future_weeks=sc.future_weeks,
            )
            _fit_yaml(out, {
                "model": {"variant": sc.variant, "likelihood": "chikv_negbin"},
                "data": {
                    "series": "series.csv", "precipitation": "precipitation.csv",
                    "populations": dict(zip(ids, pops.tolist())), "initial_exposure": dict(zip(ids, init.tolist())),
                },
            })
        elif sc.kind == "covid":
            pops = np.asarray(sc.populations if sc.populations is not None else [1e6] * sc.p, dtype=float)
            A = pops.size
            ids = _task_ids(sc, A)
            contact = np.asarray(sc.contact, dtype=float) if sc.contact is not None else np.full((A, A), 1.0 / A) + np.eye(A)
            ifr = np.asarray(sc.ifr if sc.ifr is not None else np.linspace(0.001, 0.02, A), dtype=float)
            conf = epi.RenewalConfig(pops, contact, ifr, changepoint_stride=sc.changepoint_stride)
            x0 = np.full(A, -1.0) if sc.x0 is None else np.asarray(sc.x0, dtype=float)
            sim = simulate_covid(sc.variant, sc.params, conf, sc.T, x0, sc.seed_level, sc.phi, seed=seed)
            times = np.arange(1, sc.T + 1, dtype=float)
            write_series(out / "series.csv", SeriesTable(ids, times, sim.counts, int_axis))
            write_matrix_csv(out / "contact.csv", ids, contact)
            pd.DataFrame({"group": ids, "ifr": [_fmt(v) for v in ifr], "population": [_fmt(v) for v in pops]}).to_csv(
                out / "groups.csv", index=False
            )
            truth.update(variant=sc.variant, params=sc.params, x0=x0, seed_level=sc.seed_level, phi=sc.phi, T=sc.T,
                         changepoint_stride=sc.changepoint_stride)
            _fit_yaml(out, {
                "model": {"variant": sc.variant, "likelihood": "covid_negbin"},
                "data": {"series": "series.csv", "contact": "contact.csv", "groups": "groups.csv",
                         "changepoint_stride": sc.changepoint_stride},
            })
        elif sc.kind == "sde":
            ids = _task_ids(sc, sc.p)
            sm = float(sc.params.get("sigma_mu", 1.0))
            sx = float(sc.params.get("sigma_x", 1.0))
            rate = sc.drift_rate
            diff = ExchangeableDiffusion(sc.p, sm, sx, drift=(lambda x: -rate * x) if rate else None)
            grid = TimeGrid(sc.dt * np.arange(sc.T + 1))
            path = euler_maruyama(diff, np.full(sc.p, sc.sde_x0), grid, seed)
            write_series(out / "series.csv", SeriesTable(ids, grid.times, path.states.T, TimeAxis("real")))
            truth.update(sigma_mu=sm, sigma_x=sx, drift_rate=rate, dt=sc.dt, steps=sc.T, x0=sc.sde_x0, p=sc.p)
        else:
            raise ConfigError(f"simulate.kind {sc.kind!r} must be one of gaussian, chikv, covid, sde")
    except (KeyError, TypeError) as err:
        raise ConfigError(f"simulate: missing or invalid parameter ({err})") from err
    except ValueError as err:
        if isinstance(err, (ConfigError, DataError, NumericalError)):
            raise
        raise ConfigError(f"simulate: {err}") from err
    _write_json(
        {"command": "simulate", "seed": seed, "config": materialize(cfg), "truth": truth, "versions": _versions()},
        out / "manifest.json",
    )


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "prequential": cmd_prequential, "simulate": cmd_simulate}


# ---------------------------------------------------------------------------
# click wiring


def _options(f):
    f = click.option("--resume", is_flag=True, help="Reuse completed steps in the output directory.")(f)
    f = click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")(f)
    f = click.option("--seed", type=int, default=None, help="Override the config seed.")(f)
    f = click.option("--config", type=click.Path(), required=True, help="YAML run configuration.")(f)
    return f


@click.group()
@click.version_option(VERSION)
def main():
    """Exchangeable multi-task GP models: fit, predict, prequential, simulate."""


@main.command()
@_options
def fit(config, seed, out, resume):
    """Sample the posterior and write draws, diagnostics and summaries."""
    _run("fit", config, seed, out, resume)


@main.command()
@_options
def predict(config, seed, out, resume):
    """Forecast from a fitted run."""
    _run("predict", config, seed, out, resume)


@main.command()
@_options
def prequential(config, seed, out, resume):
    """Rolling fit-forecast-score evaluation of one or more variants."""
    _run("prequential", config, seed, out, resume)


@main.command()
@_options
def simulate(config, seed, out, resume):
    """Generate a synthetic dataset with its ground truth."""
    _run("simulate", config, seed, out, resume)


if __name__ == "__main__":
    main()
