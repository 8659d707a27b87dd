"""Loading, aligning and Min-Max scaling of daily multi-column series."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

FILL_POLICIES = ("forward-fill", "drop-row")
MISSING_TOKENS = ("", "NA", "na", "NaN", "nan", "null")


class DataError(ValueError):
    """Raised for unreadable, malformed or inconsistent input data."""


@dataclass(frozen=True)
class TimeFrame:
    """Date-indexed table of named float columns. Missing cells are NaN."""

    dates: np.ndarray  # datetime64[D], strictly increasing
    columns: dict[str, np.ndarray]
    target_column: str

    def __post_init__(self) -> None:
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        object.__setattr__(self, "dates", dates)
        cols = {name: np.asarray(v, dtype=float) for name, v in self.columns.items()}
        object.__setattr__(self, "columns", cols)
        if len(dates) > 1 and not np.all(dates[1:] > dates[:-1]):
            raise DataError("dates must be strictly increasing without duplicates")
        for name, values in cols.items():
            if values.shape != (len(dates),):
                raise DataError(f"column {name!r} has {values.shape[0]} values for {len(dates)} dates")
        if self.target_column not in cols:
            raise DataError(f"target column {self.target_column!r} not among {sorted(cols)}")

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    @property
    def target(self) -> np.ndarray:
        return self.columns[self.target_column]

    @property
    def missing_count(self) -> int:
        return int(sum(np.isnan(v).sum() for v in self.columns.values()))

    def slice(self, start: int | None = None, stop: int | None = None) -> TimeFrame:
        return TimeFrame(
            self.dates[start:stop],
            {k: v[start:stop].copy() for k, v in self.columns.items()},
            self.target_column,
        )

    def with_target(self, target_column: str) -> TimeFrame:
        return TimeFrame(self.dates, self.columns, target_column)

    def to_pandas(self) -> pd.DataFrame:
        df = pd.DataFrame(self.columns, index=pd.DatetimeIndex(self.dates, name="date"))
        return df

    @classmethod
    def from_pandas(cls, df: pd.DataFrame, target_column: str) -> TimeFrame:
        dates = np.asarray(pd.DatetimeIndex(df.index).values, dtype="datetime64[D]")
        return cls(dates, {str(c): df[c].to_numpy(dtype=float) for c in df.columns}, target_column)

    def to_csv(self, path: str | Path, float_format: str = "%.10g") -> None:
        df = self.to_pandas()
        df.index = df.index.strftime("%Y-%m-%d")
        df.to_csv(path, float_format=float_format, na_rep="NA", lineterminator="\n")


def load_csv(path: str | Path, date_column: str = "date", target_column: str | None = None) -> TimeFrame:
    """Read a CSV with one ISO date column and numeric value columns.

    Non-numeric cells become NaN. Rows are sorted by date. If ``target_column``
    is omitted the first value column is used.
    """
    path = Path(path)
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"cannot read {path}: no such file") from None
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None

    if date_column not in raw.columns:
        raise DataError(f"{path}: no date column {date_column!r} (header: {list(raw.columns)})")
    if raw.empty:
        raise DataError(f"{path}: zero data rows")

    dates = pd.to_datetime(raw[date_column].str.strip(), format="%Y-%m-%d", errors="coerce")
    if dates.isna().any():
        line = int(np.flatnonzero(dates.isna().to_numpy())[0]) + 2
        raise DataError(f"{path}:{line}: unparseable ISO date {raw[date_column].iloc[line - 2]!r}")
    if dates.duplicated().any():
        raise DataError(f"{path}: duplicate dates")

    values = raw.drop(columns=[date_column])
    if values.shape[1] == 0:
        raise DataError(f"{path}: no value columns")
    values = values.apply(lambda s: pd.to_numeric(s.str.strip().replace(list(MISSING_TOKENS), np.nan), errors="coerce"))
    values.index = pd.DatetimeIndex(dates)
    values = values.sort_index()
    target = target_column or str(values.columns[0])
    return TimeFrame.from_pandas(values, target)


def align_and_fill(frames: Iterable[TimeFrame], policy: str = "forward-fill", target_column: str | None = None) -> TimeFrame:
    """Merge frames on their dates.

    ``drop-row`` keeps the date intersection and then drops any row with a
    missing cell. ``forward-fill`` takes the date union, carries values forward
    and drops leading rows that still contain gaps.
    """
    frames = list(frames)
    if not frames:
        raise DataError("align_and_fill needs at least one frame")
    if policy not in FILL_POLICIES:
        raise DataError(f"unknown fill policy {policy!r}; expected one of {FILL_POLICIES}")

    seen: set[str] = set()
    for fr in frames:
        clash = seen.intersection(fr.columns)
        if clash:
            raise DataError(f"column name collision across frames: {sorted(clash)}")
        seen.update(fr.columns)

    how = "inner" if policy == "drop-row" else "outer"
    merged = pd.concat([fr.to_pandas() for fr in frames], axis=1, join=how).sort_index()
    if policy == "forward-fill":
        merged = merged.ffill()
    merged = merged.dropna(how="any")
    if merged.empty:
        raise DataError("alignment left no complete rows")
    return TimeFrame.from_pandas(merged, target_column or frames[0].target_column)


@dataclass(frozen=True)
class ScalerParams:
    """Per-column (min, max) pairs; columns with max == min are degenerate."""

    per_column: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, (lo, hi) in self.per_column.items():
            if not hi >= lo:
                raise DataError(f"scaler column {name!r}: max {hi} < min {lo}")

    def is_degenerate(self, column: str) -> bool:
        lo, hi = self.per_column[column]
        return hi == lo

    @property
    def degenerate(self) -> set[str]:
        return {c for c in self.per_column if self.is_degenerate(c)}

    def to_json(self) -> str:
        return json.dumps({k: [lo, hi] for k, (lo, hi) in self.per_column.items()}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> ScalerParams:
        data = json.loads(text)
        return cls({k: (float(v[0]), float(v[1])) for k, v in data.items()})

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, tuple[float, float]]) -> ScalerParams:
        return cls({k: (float(lo), float(hi)) for k, (lo, hi) in mapping.items()})


def fit_scaler(frame: TimeFrame) -> ScalerParams:
    """Column-wise min/max over exactly the rows passed in (no leakage beyond them)."""
    if len(frame) == 0:
        raise DataError("cannot fit a scaler on an empty frame")
    return ScalerParams({name: (float(np.nanmin(v)), float(np.nanmax(v))) for name, v in frame.columns.items()})


def scale_values(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if hi == lo:
        return np.full_like(values, 0.5)
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


def transform(frame: TimeFrame, scaler: ScalerParams) -> TimeFrame:
    """Map every column into [0, 1]; out-of-range values clip, constant columns become 0.5."""
    missing = [c for c in frame.columns if c not in scaler.per_column]
    if missing:
        raise DataError(f"scaler has no parameters for columns {missing}")
    cols = {name: scale_values(v, *scaler.per_column[name]) for name, v in frame.columns.items()}
    return TimeFrame(frame.dates, cols, frame.target_column)


def inverse_transform(value: float | np.ndarray, column: str, scaler: ScalerParams) -> float | np.ndarray:
    """Undo the Min-Max map. A degenerate column returns its constant."""
    if column not in scaler.per_column:
        raise DataError(f"scaler has no parameters for column {column!r}")
    lo, hi = scaler.per_column[column]
    return lo + np.asarray(value, dtype=float) * (hi - lo) if np.ndim(value) else lo + float(value) * (hi - lo)
