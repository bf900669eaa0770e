"""Forecast scores, pointwise log-likelihood export and prequential evaluation.

All scores are negatively oriented (lower is better). The log score uses a
moment-matched normal per cell and is reported as a per-observation mean.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .forecast import Forecast, chikv_forecast, covid_forecast, gaussian_forecast
from .gp import LOG_2PI
from .inference.hmc import PosteriorDraws, SamplerConfig, hmc_sample
from .inference.model import ChikvData, CovidData, GaussianData, Likelihood, ModelSpec
from .kernels import TimeGrid

log = logging.getLogger(__name__)

CRITERIA = ("CRPS", "LS", "RMSE", "MAE")


@dataclass
class ForecastEnsemble:
    """Predictive samples (draws, cells) and the matching observed targets."""

    samples: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.targets = np.atleast_1d(np.asarray(self.targets, dtype=float))
        self.samples = np.asarray(self.samples, dtype=float).reshape(-1, self.targets.size)
        if self.samples.shape[0] < 2:
            raise ValueError("need at least 2 samples per cell")


def crps_cells(ens: ForecastEnsemble) -> np.ndarray:
    """Empirical CRPS per cell: ``E|X - y| - E|X - X'| / 2`` over ordered pairs i != j."""
    x = np.sort(ens.samples, axis=0)
    m = x.shape[0]
    first = np.mean(np.abs(x - ens.targets), axis=0)
    # sum_{i,j} |x_i - x_j| = 2 sum_k (2k - m - 1) x_(k) for sorted samples
    k = np.arange(1, m + 1)[:, None]
    pair_sum = 2.0 * np.sum((2 * k - m - 1) * x, axis=0)
    return first - 0.5 * pair_sum / (m * (m - 1))


def crps(ens: ForecastEnsemble) -> tuple[np.ndarray, float]:
    cells = crps_cells(ens)
    return cells, float(cells.mean())


def log_score_cells(ens: ForecastEnsemble) -> np.ndarray:
    mu = ens.samples.mean(axis=0)
    var = ens.samples.var(axis=0, ddof=1)
    if np.any(var <= 0):
        raise ValueError("log score needs positive sample variance in every cell")
    return 0.5 * LOG_2PI + 0.5 * np.log(var) + 0.5 * (ens.targets - mu) ** 2 / var


def log_score(ens: ForecastEnsemble) -> float:
    """Mean negative log predictive density (normal approximation)."""
    return float(log_score_cells(ens).mean())


def rmse_mae(ens: ForecastEnsemble) -> tuple[float, float]:
    err = np.median(ens.samples, axis=0) - ens.targets
    return float(np.sqrt(np.mean(err**2))), float(np.mean(np.abs(err)))


# ---------------------------------------------------------------------------
# Pointwise log-likelihood export


def export_pointwise_ll(draws: PosteriorDraws, path) -> Path:
    """Write the (draws x observations) log-likelihood matrix with an id header."""
    if draws.pointwise_ll is None:
        raise ValueError("draws carry no pointwise log-likelihood")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(draws.obs_ids)
        for row in draws.pointwise_ll:
            w.writerow([format(v, ".17g") for v in row])
    return path


def read_pointwise_ll(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    ids = rows[0]
    mat = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(len(rows) - 1, len(ids))
    return ids, mat


# ---------------------------------------------------------------------------
# Prequential protocol


@dataclass
class PrequentialPlan:
    """Rolling-origin schedule in the data's time units (weeks for weekly data)."""

    initial_train_end: float
    step: float = 1.0
    horizon: float = 1.0
    n_steps: int = 8

    def __post_init__(self):
        if self.step <= 0 or self.horizon <= 0 or self.n_steps < 1:
            raise ValueError("step and horizon must be positive and n_steps >= 1")

    def train_end(self, k: int) -> float:
        return self.initial_train_end + k * self.step


@dataclass
class PrequentialResult:
    cells: pd.DataFrame
    per_step: pd.DataFrame
    pooled: pd.DataFrame
    failures: list[dict] = field(default_factory=list)

    def table_text(self) -> str:
        return score_table_text(self.pooled)


def step_seed(seed: int, step: int) -> int:
    """Seed for one prequential step; independent of which model is fitted."""
    return int(np.random.SeedSequence([int(seed), int(step)]).generate_state(1)[0])


def _time_axis(data) -> np.ndarray:
    if isinstance(data, GaussianData):
        return data.grid.times
    return np.arange(1, data.T + 1, dtype=float)


def _split(data, train_end: float, horizon: float):
    """Training data and held-out (tasks, times, targets) for one step."""
    times = _time_axis(data)
    train = times <= train_end + 1e-9
    test = (times > train_end + 1e-9) & (times <= train_end + horizon + 1e-9)
    if train.sum() < 2 or test.sum() < 1:
        raise ValueError(f"plan step ending at {train_end} leaves no training or test data")
    if isinstance(data, GaussianData):
        tr = GaussianData(data.y[:, train], TimeGrid(times[train]))
        values = data.y[:, test]
    elif isinstance(data, ChikvData):
        tr = ChikvData(data.observed[:, train], data.config)
        values = data.observed[:, test]
    else:
        tr = CovidData(data.deaths[:, train], data.config)
        values = data.deaths[:, test]
    if not np.all(np.flatnonzero(train) == np.arange(train.sum())):
        raise ValueError("training window must be a prefix of the series")
    return tr, times[test], values


def forecast_window(draws, model: ModelSpec, train, test_times, seed, per_draw: int = 1) -> Forecast:
    p = train.n_tasks
    if model.likelihood is Likelihood.GAUSSIAN:
        tasks = np.repeat(np.arange(p), test_times.size)
        times = np.tile(test_times, p)
        return gaussian_forecast(draws, model, train, tasks, times, per_draw=per_draw, seed=seed)
    h = test_times.size
    if model.likelihood is Likelihood.CHIKV:
        return chikv_forecast(draws, model, train, h, seed=seed)
    return covid_forecast(draws, model, train, h, seed=seed)


def _run_one(name, model, data, plan, sampler, k, seed, per_draw):
    s = step_seed(seed, k)
    train, test_times, values = _split(data, plan.train_end(k), plan.horizon)
    cfg = SamplerConfig(**{**asdict(sampler), "seed": s})
    draws = hmc_sample(model, train, cfg, keep_pointwise=False)
    fc = forecast_window(draws, model, train, test_times, seed=s + 1, per_draw=per_draw)
    targets = values.ravel()
    keep = ~np.isnan(targets)
    ens = ForecastEnsemble(fc.samples[:, keep], targets[keep])
    med = np.median(ens.samples, axis=0)
    return pd.DataFrame(
        {
            "model": name,
            "step": k,
            "train_end": plan.train_end(k),
            "task": fc.tasks[keep],
            "time": fc.times[keep],
            "target": ens.targets,
            "median": med,
            "crps": crps_cells(ens),
            "ls": log_score_cells(ens),
            "abs_err": np.abs(med - ens.targets),
            "sq_err": (med - ens.targets) ** 2,
        }
    )


def _summarize(cells: pd.DataFrame, by) -> pd.DataFrame:
    g = cells.groupby(by, sort=True)
    return pd.DataFrame(
        {
            "CRPS": g["crps"].mean(),
            "LS": g["ls"].mean(),
            "RMSE": np.sqrt(g["sq_err"].mean()),
            "MAE": g["abs_err"].mean(),
            "n_cells": g.size(),
        }
    ).reset_index()


def pooled_table(cells: pd.DataFrame, model_order=None) -> pd.DataFrame:
    """Criterion x model table over pooled test cells, with a preferred-model column."""
    s = _summarize(cells, ["model"]).set_index("model")
    order = list(model_order) if model_order is not None else list(s.index)
    order = [m for m in order if m in s.index]
    table = s.loc[order, list(CRITERIA)].T
    table["preferred"] = [table.loc[c].astype(float).idxmin() for c in CRITERIA]
    table.index.name = "criterion"
    return table


def score_table_text(table: pd.DataFrame) -> str:
    models = [c for c in table.columns if c != "preferred"]
    width = max([10] + [len(m) + 2 for m in models])
    head = "criterion".ljust(10) + "".join(m.rjust(width) for m in models) + "   preferred"
    lines = [head, "-" * len(head)]
    for crit, row in table.iterrows():
        vals = "".join(f"{float(row[m]):{width}.4f}" for m in models)
        lines.append(f"{crit:<10}{vals}   {row['preferred']}")
    return "\n".join(lines)


def prequential_run(
    models: dict[str, ModelSpec] | ModelSpec,
    data,
    plan: PrequentialPlan,
    sampler: SamplerConfig,
    seed: int = 0,
    per_draw: int = 1,
    resume_dir=None,
    n_jobs: int = 1,
) -> PrequentialResult:
    """Fit, forecast and score every model over the rolling plan.

    Each (model, step) uses a seed derived from ``seed`` and the step index
    only, so scores do not depend on the order models are listed in. Failed
    fits are recorded and the remaining steps continue. With ``resume_dir``,
    completed (model, step) cell tables are cached there and reused.
    """
    if isinstance(models, ModelSpec):
        models = {models.variant: models}
    cache = Path(resume_dir) if resume_dir is not None else None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
    jobs = [(name, k) for name in models for k in range(plan.n_steps)]

    def path_for(name, k):
        return cache / f"cells_{name}_step{k}.csv"

    def work(name, k):
        if cache is not None and path_for(name, k).exists():
            return name, k, pd.read_csv(path_for(name, k), float_precision="round_trip"), None
        try:
            df = _run_one(name, models[name], data, plan, sampler, k, seed, per_draw)
        except Exception as err:  # noqa: BLE001 - recorded, run continues
            log.warning("prequential step %d for %s failed: %r", k, name, err)
            return name, k, None, {"model": name, "step": k, "error": repr(err)}
        if cache is not None:
            tmp = path_for(name, k).with_suffix(".tmp")
            df.to_csv(tmp, index=False, float_format="%.17g")
            os.replace(tmp, path_for(name, k))
        return name, k, df, None

    if n_jobs != 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(work)(n, k) for n, k in jobs)
    else:
        results = [work(n, k) for n, k in jobs]
    frames = [r[2] for r in results if r[2] is not None]
    failures = sorted((r[3] for r in results if r[3] is not None), key=lambda f: (f["model"], f["step"]))
    if cache is not None:
        (cache / "failures.json").write_text(json.dumps(failures, indent=2))
    if not frames:
        raise RuntimeError(f"every prequential step failed: {failures}")
    cells = pd.concat(frames, ignore_index=True).sort_values(["model", "step", "task", "time"], ignore_index=True)
    per_step = _summarize(cells, ["model", "step"])
    return PrequentialResult(cells, per_step, pooled_table(cells, list(models)), failures)
