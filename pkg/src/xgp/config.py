"""Run configuration: YAML files parsed into dataclasses, and dataset loading.

Relative data paths resolve against the config file's directory. Every
default is materialized by :func:`materialize` so the run manifest records
the full effective configuration.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import epimodels as epi
from .inference.hmc import SamplerConfig
from .inference.model import ALL_VARIANTS, ChikvData, CovidData, GaussianData, Likelihood, ModelSpec
from .inference.priors import PriorSet, prior_from_dict, prior_to_dict
from .io import ConfigError, DataError, SeriesTable, read_contact, read_groups, read_precipitation, read_series
from .kernels import TimeGrid


@dataclass
class ModelConfig:
    variant: str = "xBM"
    likelihood: str = "gaussian"
    marginalize: bool = True
    priors: dict = field(default_factory=dict)

    def spec(self, variant: str | None = None) -> ModelSpec:
        try:
            overrides = {k: prior_from_dict(v) for k, v in self.priors.items()}
            return ModelSpec(
                variant or self.variant, Likelihood(self.likelihood), PriorSet().with_overrides(**overrides), self.marginalize
            )
        except (ValueError, TypeError, KeyError) as err:
            raise ConfigError(f"model: {err}") from err


@dataclass
class DataConfig:
    series: str | None = None
    unit_days: float | None = None
    precipitation: str | None = None
    populations: dict | None = None
    initial_exposure: dict | None = None
    exposure_offset: float = 0.0
    contact: str | None = None
    groups: str | None = None
    seed_days: int = epi.SEED_DAYS
    changepoint_stride: int = 3
    gen_time: list = field(default_factory=lambda: [*epi.GENERATION_TIME, 70])
    inf_to_death: list = field(default_factory=lambda: [*epi.INFECTION_TO_DEATH, 100])


@dataclass
class FitConfig:
    reconstruct_latents: bool = True


@dataclass
class PredictConfig:
    run: str | None = None
    horizon: int = 1
    tasks: list | None = None
    per_draw: int = 1
    max_draws: int | None = None
    include_obs_noise: bool = True
    ensemble: bool = False


@dataclass
class PlanConfig:
    initial_train_end: float | str = 0
    step: float = 1.0
    horizon: float = 1.0
    n_steps: int = 8


@dataclass
class PrequentialConfig:
    models: list = field(default_factory=list)
    plan: PlanConfig = field(default_factory=PlanConfig)
    per_draw: int = 1
    n_jobs: int = 1


@dataclass
class SimulateConfig:
    kind: str = "gaussian"  # gaussian | chikv | covid | sde
    variant: str = "xBM"
    params: dict = field(default_factory=dict)
    p: int = 3
    T: int = 30
    task_ids: list | None = None
    sigma_y: float = 0.1
    # epidemic settings
    populations: list | None = None
    x0: list | None = None
    log_beta_p: list | None = None
    phi: float = 0.1
    initial_exposure: list | None = None
    precipitation_mean: float = 2.0
    future_weeks: int = 8
    ifr: list | None = None
    contact: list | None = None
    seed_level: float = 10.0
    changepoint_stride: int = 3
    # sde settings
    dt: float = 0.01
    drift_rate: float = 0.0
    sde_x0: float = 0.0


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    predict: PredictConfig = field(default_factory=PredictConfig)
    prequential: PrequentialConfig = field(default_factory=PrequentialConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    base_dir: str = "."

    def path(self, rel: str | None) -> Path | None:
        if rel is None:
            return None
        p = Path(rel)
        return p if p.is_absolute() else Path(self.base_dir) / p


def _build(cls, raw, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(names)}")
    kwargs = {}
    for k, v in raw.items():
        fac = names[k].default_factory
        nested = isinstance(fac, type) and dataclasses.is_dataclass(fac)
        kwargs[k] = _build(fac, v, f"{where}.{k}") if nested else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{where}: {err}") from err


SECTIONS = {
    "model": ModelConfig,
    "data": DataConfig,
    "sampler": SamplerConfig,
    "fit": FitConfig,
    "predict": PredictConfig,
    "prequential": PrequentialConfig,
    "simulate": SimulateConfig,
}


def parse_config(raw: dict, base_dir=".") -> RunConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = sorted(set(raw) - set(SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {unknown}; allowed: {sorted(SECTIONS) + ['seed']}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    parts = {name: _build(cls, raw.get(name), name) for name, cls in SECTIONS.items()}
    cfg = RunConfig(seed=seed, base_dir=str(base_dir), **parts)
    if cfg.model.variant not in ALL_VARIANTS:
        raise ConfigError(f"model.variant {cfg.model.variant!r} is not one of {list(ALL_VARIANTS)}")
    if cfg.model.likelihood not in [lk.value for lk in Likelihood]:
        raise ConfigError(f"model.likelihood {cfg.model.likelihood!r} is not one of {[lk.value for lk in Likelihood]}")
    for v in cfg.prequential.models:
        if v not in ALL_VARIANTS:
            raise ConfigError(f"prequential.models entry {v!r} is not one of {list(ALL_VARIANTS)}")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: invalid YAML ({err})") from err
    return parse_config(raw, path.resolve().parent)


def materialize(cfg: RunConfig) -> dict:
    """Plain-dict echo of the effective config (with all defaults)."""
    return dataclasses.asdict(cfg)


# ---------------------------------------------------------------------------
# Dataset loading


@dataclass
class Dataset:
    data: object  # GaussianData | ChikvData | CovidData
    series: SeriesTable
    # full-length precipitation config for forecasting past the series
    chikv_config: epi.ChikvConfig | None = None


def _per_task(mapping, task_ids, what):
    if mapping is None:
        return None
    if isinstance(mapping, (list, tuple)):
        if len(mapping) != len(task_ids):
            raise ConfigError(f"data.{what}: expected {len(task_ids)} values, got {len(mapping)}")
        return np.asarray(mapping, dtype=float)
    missing = [t for t in task_ids if t not in mapping and str(t) not in mapping]
    if missing:
        raise ConfigError(f"data.{what}: no entry for task(s) {missing}")
    return np.array([float(mapping.get(t, mapping.get(str(t)))) for t in task_ids])


def _index_times(series: SeriesTable, path) -> None:
    t = series.times
    if t.size > 1 and not np.allclose(np.diff(t), np.diff(t)[0]):
        raise DataError(f"{path}: epidemic series must be on an equally spaced time axis")


def load_dataset(cfg: RunConfig) -> Dataset:
    d = cfg.data
    if d.series is None:
        raise ConfigError("data.series is required")
    spath = cfg.path(d.series)
    series = read_series(spath, unit_days=d.unit_days)
    lik = Likelihood(cfg.model.likelihood)
    if lik is Likelihood.GAUSSIAN:
        return Dataset(GaussianData(series.values, TimeGrid(series.times)), series)
    _index_times(series, spath)
    if lik is Likelihood.CHIKV:
        if d.precipitation is None:
            raise ConfigError("data.precipitation is required for the chikv_negbin likelihood")
        if d.populations is None:
            raise ConfigError("data.populations is required for the chikv_negbin likelihood")
        precip = read_precipitation(cfg.path(d.precipitation), series.task_ids, series.times, series.axis)
        pops = _per_task(d.populations, series.task_ids, "populations")
        init = _per_task(d.initial_exposure, series.task_ids, "initial_exposure")
        full = epi.ChikvConfig(pops, precip, init, d.exposure_offset)
        if np.any(np.isnan(series.values)):
            raise DataError(f"{spath}: chikv incidence must be complete (no missing values)")
        try:
            data = ChikvData(series.values, full)
        except ValueError as err:
            raise DataError(f"{spath}: {err}") from err
        return Dataset(data, series, full)
    if d.contact is None or d.groups is None:
        raise ConfigError("data.contact and data.groups are required for the covid_negbin likelihood")
    names_c, contact = read_contact(cfg.path(d.contact))
    names_g, ifr, pop = read_groups(cfg.path(d.groups))
    if names_c != names_g:
        raise DataError(f"{cfg.path(d.contact)}: group names {names_c} do not match {cfg.path(d.groups)} {names_g}")
    if [str(t) for t in series.task_ids] != names_g:
        raise DataError(f"{spath}: column 'task_id' groups {series.task_ids} must match {cfg.path(d.groups)} order {names_g}")
    rc = epi.RenewalConfig(
        pop,
        contact,
        ifr,
        gen_time=epi.discretize_gamma(*d.gen_time[:2], int(d.gen_time[2])),
        inf_to_death=epi.discretize_gamma(*d.inf_to_death[:2], int(d.inf_to_death[2])),
        seed_days=d.seed_days,
        changepoint_stride=d.changepoint_stride,
    )
    return Dataset(CovidData(series.values, rc), series)


def prior_echo(spec: ModelSpec) -> dict:
    p = spec.priors
    out = {f.name: prior_to_dict(getattr(p, f.name)) for f in dataclasses.fields(p) if f.name != "overrides"}
    out["overrides"] = {k: prior_to_dict(v) for k, v in p.overrides.items()}
    return out
