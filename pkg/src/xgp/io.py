"""CSV ingestion and emission.

Schemas:

* series: ``task_id,time,value`` in long format; ``time`` is an integer, a
  real number or an ISO date; an empty ``value`` (or NA/NaN) marks a
  missing observation.
* precipitation: ``task_id,time,value_cm`` on the series time axis, with at
  least 8 steps before the first series time.
* contact matrix: A x A numeric grid with the group names as header.
* groups: ``group,ifr,population``.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

SERIES_COLUMNS = ("task_id", "time", "value")
PRECIP_COLUMNS = ("task_id", "time", "value_cm")
GROUP_COLUMNS = ("group", "ifr", "population")
MISSING = ("", "NA", "NaN", "nan", "null")


class ConfigError(ValueError):
    """Invalid run configuration (exit code 2)."""


class DataError(ValueError):
    """Malformed or inconsistent input data (exit code 3)."""


def _read_csv(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as err:
        raise DataError(f"{path}: cannot parse CSV ({err})") from err


def _require(df: pd.DataFrame, columns, path, hint: str = "") -> None:
    have = [c.strip() for c in df.columns]
    for c in columns:
        if c not in have:
            raise DataError(f"{path}: missing required column {c!r} (found {have}){hint}")


def _numeric(values, column: str, path, allow_missing: bool = False) -> np.ndarray:
    out = np.empty(len(values))
    for k, v in enumerate(values):
        v = v.strip()
        if v in MISSING:
            if not allow_missing:
                raise DataError(f"{path}: column {column!r} row {k + 2} is empty")
            out[k] = np.nan
            continue
        try:
            out[k] = float(v)
        except ValueError:
            raise DataError(f"{path}: column {column!r} row {k + 2}: {v!r} is not a number") from None
    return out


# ---------------------------------------------------------------------------
# Time axis


@dataclass(frozen=True)
class TimeAxis:
    """Mapping between file time labels and model times.

    Integer and real labels map to themselves. ISO dates map to
    ``(date - origin).days / unit_days + 1``.
    """

    kind: str  # "int", "real" or "date"
    origin: dt.date | None = None
    unit_days: float = 1.0

    def to_model(self, labels, column="time", path="") -> np.ndarray:
        return np.array([self._one(v, column, path) for v in labels], dtype=float)

    def _one(self, v, column, path) -> float:
        v = str(v).strip()
        if self.kind == "int":
            try:
                return float(int(v))
            except ValueError:
                raise DataError(f"{path}: column {column!r}: {v!r} is not an integer time") from None
        if self.kind == "real":
            try:
                return float(v)
            except ValueError:
                raise DataError(f"{path}: column {column!r}: {v!r} is not a number") from None
        try:
            d = dt.date.fromisoformat(v)
        except ValueError:
            raise DataError(f"{path}: column {column!r}: {v!r} is not an ISO date") from None
        return (d - self.origin).days / self.unit_days + 1.0

    def label(self, t: float) -> str:
        if self.kind == "int":
            return str(int(round(t)))
        if self.kind == "real":
            return format(float(t), ".17g")
        days = round((t - 1.0) * self.unit_days)
        return (self.origin + dt.timedelta(days=days)).isoformat()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "origin": None if self.origin is None else self.origin.isoformat(), "unit_days": self.unit_days}

    @classmethod
    def from_dict(cls, d: dict) -> "TimeAxis":
        origin = d.get("origin")
        return cls(d["kind"], None if origin is None else dt.date.fromisoformat(origin), float(d.get("unit_days", 1.0)))


def infer_axis(labels, path="", column="time", unit_days: float | None = None) -> TimeAxis:
    labels = [str(v).strip() for v in labels]
    if not labels:
        raise DataError(f"{path}: no rows")
    try:
        [int(v) for v in labels]
        return TimeAxis("int")
    except ValueError:
        pass
    try:
        vals = [float(v) for v in labels]
        if all(np.isfinite(vals)):
            return TimeAxis("real")
    except ValueError:
        pass
    try:
        dates = sorted({dt.date.fromisoformat(v) for v in labels})
    except ValueError:
        bad = next(v for v in labels if not _is_date(v))
        raise DataError(f"{path}: column {column!r}: {bad!r} is neither a number nor an ISO date") from None
    if unit_days is None:
        gaps = np.diff([d.toordinal() for d in dates])
        unit_days = float(gaps.min()) if gaps.size else 1.0
    return TimeAxis("date", dates[0], float(unit_days))


def _is_date(v: str) -> bool:
    try:
        dt.date.fromisoformat(v)
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# Series


@dataclass
class SeriesTable:
    task_ids: list[str]
    times: np.ndarray  # model times (n,)
    values: np.ndarray  # (p, n), NaN for missing
    axis: TimeAxis

    @property
    def p(self) -> int:
        return len(self.task_ids)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for i, task in enumerate(self.task_ids):
            for j, t in enumerate(self.times):
                rows.append((task, self.axis.label(t), self.values[i, j]))
        return pd.DataFrame(rows, columns=list(SERIES_COLUMNS))


def read_series(path, unit_days: float | None = None) -> SeriesTable:
    """Long-format series; tasks keep first-appearance order."""
    df = _read_csv(path)
    df.columns = [c.strip() for c in df.columns]
    if "value" not in df.columns and "task_id" not in df.columns and len(df.columns) > 2:
        raise DataError(
            f"{path}: looks like a wide table (columns {list(df.columns)}); "
            "series must be long format with columns task_id,time,value"
        )
    _require(df, SERIES_COLUMNS, path, "; series must be long format task_id,time,value")
    tasks = [t.strip() for t in df["task_id"]]
    if any(t == "" for t in tasks):
        raise DataError(f"{path}: column 'task_id' has empty entries")
    axis = infer_axis(df["time"], path, unit_days=unit_days)
    times = axis.to_model(df["time"], path=path)
    vals = _numeric(df["value"], "value", path, allow_missing=True)
    keys = list(zip(tasks, times))
    if len(set(keys)) != len(keys):
        dup = next(k for k in keys if keys.count(k) > 1)
        raise DataError(f"{path}: duplicate (task_id, time) key {dup[0]!r}, {axis.label(dup[1])}")
    task_ids = list(dict.fromkeys(tasks))
    grid = np.unique(times)
    y = np.full((len(task_ids), grid.size), np.nan)
    ti = {t: k for k, t in enumerate(task_ids)}
    col = np.searchsorted(grid, times)
    for task, c, v in zip(tasks, col, vals):
        y[ti[task], c] = v
    return SeriesTable(task_ids, grid, y, axis)


def write_series(path, table: SeriesTable) -> Path:
    path = Path(path)
    df = table.to_frame()
    df["value"] = [("" if np.isnan(v) else format(v, ".17g")) for v in df["value"]]
    df.to_csv(path, index=False)
    return path


# ---------------------------------------------------------------------------
# Covariates and epidemic configuration


def read_precipitation(path, task_ids, series_times, axis: TimeAxis, lead: int = 8) -> np.ndarray:
    """Weekly precipitation aligned to the series: shape (S, lead + W).

    Column ``lead`` corresponds to the first series time. The matrix extends
    forward while every task has a value, which may go past the series end
    (future covariates for forecasting).
    """
    df = _read_csv(path)
    df.columns = [c.strip() for c in df.columns]
    _require(df, PRECIP_COLUMNS, path)
    times = axis.to_model(df["time"], path=path)
    vals = _numeric(df["value_cm"], "value_cm", path)
    tasks = [t.strip() for t in df["task_id"]]
    lookup = {(k, float(t)): v for k, t, v in zip(tasks, times, vals)}
    st = np.asarray(series_times, dtype=float)
    step = float(np.min(np.diff(st))) if st.size > 1 else 1.0
    start = st[0] - lead * step
    rows = []
    for task in task_ids:
        row = []
        t = start
        while (task, float(t)) in lookup:
            row.append(lookup[(task, float(t))])
            t += step
        if len(row) < lead + st.size:
            missing = axis.label(start + len(row) * step)
            raise DataError(
                f"{path}: column 'value_cm' for task {task!r} has no value at time {missing}; "
                f"need {lead} steps of history before the first series time and coverage of the series"
            )
        rows.append(row)
    width = min(len(r) for r in rows)
    return np.array([r[:width] for r in rows])


def read_contact(path) -> tuple[list[str], np.ndarray]:
    df = _read_csv(path)
    names = [c.strip() for c in df.columns]
    if names and names[0] == "group":
        labels = [v.strip() for v in df["group"]]
        df = df.drop(columns=df.columns[0])
        names = names[1:]
        if labels != names:
            raise DataError(f"{path}: row labels in column 'group' do not match the header {names}")
    mat = np.column_stack([_numeric(df[c], c.strip(), path) for c in df.columns]) if names else np.zeros((0, 0))
    if mat.shape != (len(names), len(names)):
        raise DataError(f"{path}: contact matrix must be square with one column per group, got {mat.shape}")
    if np.any(mat < 0):
        raise DataError(f"{path}: contact rates must be nonnegative")
    return names, mat


def read_groups(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    df = _read_csv(path)
    df.columns = [c.strip() for c in df.columns]
    _require(df, GROUP_COLUMNS, path)
    names = [g.strip() for g in df["group"]]
    ifr = _numeric(df["ifr"], "ifr", path)
    pop = _numeric(df["population"], "population", path)
    if np.any((ifr < 0) | (ifr > 1)):
        raise DataError(f"{path}: column 'ifr' must lie in [0, 1]")
    if np.any(pop <= 0):
        raise DataError(f"{path}: column 'population' must be positive")
    return names, ifr, pop


def write_matrix_csv(path, names, matrix) -> Path:
    pd.DataFrame(np.asarray(matrix), columns=list(names)).to_csv(path, index=False, float_format="%.17g")
    return Path(path)
