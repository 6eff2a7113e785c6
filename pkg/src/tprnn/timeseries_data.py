"""Ingestion of the UCI "individual household electric power consumption" file.

Only the date, time and global active power (GAP) columns are kept. Records are
held column-wise because the full file has ~2M rows; :class:`RawRecords` still
behaves as a sequence of :class:`RawRecord` for callers that want rows.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Union, overload

import numpy as np

MINUTES_PER_DAY = 1440
MINUTES_PER_WEEK = 7 * MINUTES_PER_DAY

HEADER_PREFIX = ("Date", "Time", "Global_active_power")
MISSING = "?"


class ParseError(ValueError):
    """A malformed line in a UCI household power file."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class ImputationError(ValueError):
    pass


@dataclass(frozen=True)
class RawRecord:
    date: dt.date
    time: int  # minute of day, 0..1439
    gap: float | None  # kW; None where the source has "?"

    def __post_init__(self):
        if not 0 <= self.time < MINUTES_PER_DAY:
            raise ValueError(f"minute of day out of range: {self.time}")
        if self.gap is not None and not (math.isfinite(self.gap) and self.gap >= 0):
            raise ValueError(f"invalid GAP value: {self.gap}")

    @property
    def timestamp(self) -> dt.datetime:
        return dt.datetime.combine(self.date, dt.time()) + dt.timedelta(minutes=self.time)


class RawRecords(Sequence):
    """Column store of parsed rows: day ordinal, minute of day, GAP (NaN = missing)."""

    def __init__(self, day, minute, gap):
        self.day = np.asarray(day, dtype=np.int64)
        self.minute = np.asarray(minute, dtype=np.int64)
        self.gap = np.asarray(gap, dtype=np.float64)
        if not (self.day.shape == self.minute.shape == self.gap.shape):
            raise ValueError("column lengths differ")

    @classmethod
    def from_records(cls, records) -> "RawRecords":
        records = list(records)
        return cls(
            [r.date.toordinal() for r in records],
            [r.time for r in records],
            [np.nan if r.gap is None else r.gap for r in records],
        )

    def __len__(self):
        return len(self.day)

    @overload
    def __getitem__(self, i: int) -> RawRecord: ...
    @overload
    def __getitem__(self, i: slice) -> "RawRecords": ...

    def __getitem__(self, i):
        if isinstance(i, slice):
            return RawRecords(self.day[i], self.minute[i], self.gap[i])
        g = self.gap[i]
        return RawRecord(
            dt.date.fromordinal(int(self.day[i])),
            int(self.minute[i]),
            None if np.isnan(g) else float(g),
        )

    def __iter__(self) -> Iterator[RawRecord]:
        for i in range(len(self)):
            yield self[i]

    @property
    def minute_index(self) -> np.ndarray:
        """Absolute minute number (day ordinal * 1440 + minute of day)."""
        return self.day * MINUTES_PER_DAY + self.minute

    @property
    def n_missing(self) -> int:
        return int(np.isnan(self.gap).sum())


def _parse_date(text: str) -> int:
    d, m, y = text.split("/")
    return dt.date(int(y), int(m), int(d)).toordinal()


def _parse_time(text: str) -> int:
    h, m, s = (int(part) for part in text.split(":"))
    if not (0 <= h < 24 and 0 <= m < 60 and 0 <= s < 60):
        raise ValueError(text)
    return h * 60 + m


def parse_ucihpc_csv(path: Union[str, Path]) -> RawRecords:
    """Parse a semicolon separated UCI household power file.

    Raises :class:`ParseError` naming the offending line for wrong field
    counts, bad dates/times or invalid GAP values, and for an empty file.
    """
    path = Path(path)
    days, minutes, gaps = [], [], []
    date_cache: dict[str, int] = {}
    time_cache: dict[str, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=";")
        header = next(reader, None)
        if header is None:
            raise ParseError(path, 1, "empty file")
        if tuple(h.strip() for h in header[:3]) != HEADER_PREFIX:
            raise ParseError(path, 1, f"unexpected header {';'.join(header)!r}")
        n_fields = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_fields:
                raise ParseError(path, lineno, f"expected {n_fields} fields, got {len(row)}")
            date_s, time_s, gap_s = row[0], row[1], row[2]
            try:
                day = date_cache[date_s]
            except KeyError:
                try:
                    day = date_cache[date_s] = _parse_date(date_s)
                except ValueError:
                    raise ParseError(path, lineno, f"bad date {date_s!r}") from None
            try:
                minute = time_cache[time_s]
            except KeyError:
                try:
                    minute = time_cache[time_s] = _parse_time(time_s)
                except ValueError:
                    raise ParseError(path, lineno, f"bad time {time_s!r}") from None
            if gap_s == MISSING:
                gap = math.nan
            else:
                try:
                    gap = float(gap_s)
                except ValueError:
                    raise ParseError(path, lineno, f"bad GAP value {gap_s!r}") from None
                if not (math.isfinite(gap) and gap >= 0):
                    raise ParseError(path, lineno, f"bad GAP value {gap_s!r}")
            days.append(day)
            minutes.append(minute)
            gaps.append(gap)
    if not days:
        raise ParseError(path, 2, "file has a header but no data rows")
    return RawRecords(days, minutes, gaps)


@dataclass(frozen=True, eq=False)
class LoadSeries:
    """Gap-free minute series. Arrays are made read-only on construction."""

    start: dt.datetime
    values: np.ndarray
    imputed_mask: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        mask = np.array(self.imputed_mask, dtype=bool)
        if values.ndim != 1 or values.shape != mask.shape:
            raise ValueError("values and imputed_mask must be 1-D and equally long")
        if not np.all(np.isfinite(values)):
            raise ValueError("LoadSeries values must be finite")
        values.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "imputed_mask", mask)

    def __len__(self):
        return len(self.values)

    @property
    def end(self) -> dt.datetime:
        """Timestamp one minute past the last value."""
        return self.start + dt.timedelta(minutes=len(self))

    def timestamp(self, i: int) -> dt.datetime:
        return self.start + dt.timedelta(minutes=int(i))

    def offset_of(self, when: dt.datetime) -> int:
        delta = when - self.start
        return int(delta.total_seconds() // 60)

    def window(self, offset: int, length: int) -> "LoadSeries":
        if offset < 0 or offset + length > len(self):
            raise IndexError(f"window [{offset}, {offset + length}) outside series of {len(self)}")
        return LoadSeries(
            self.timestamp(offset),
            self.values[offset : offset + length],
            self.imputed_mask[offset : offset + length],
        )

    def with_values(self, values) -> "LoadSeries":
        return LoadSeries(self.start, values, self.imputed_mask)


def impute_missing(records: RawRecords | Sequence[RawRecord]) -> LoadSeries:
    """Build a contiguous minute series, filling gaps by minute-of-day means.

    Both ``?`` rows and minutes absent from the file are filled with the mean
    of all present values at the same minute of day; a minute of day with no
    present value anywhere falls back to the global mean.
    """
    if not isinstance(records, RawRecords):
        records = RawRecords.from_records(records)
    if len(records) == 0:
        raise ImputationError("nothing to average: no records")
    idx = records.minute_index
    steps = np.diff(idx)
    if np.any(steps == 0):
        dup = int(np.flatnonzero(steps == 0)[0]) + 1
        raise ValueError(f"duplicate timestamp {records[dup].timestamp.isoformat()}")
    if np.any(steps < 0):
        bad = int(np.flatnonzero(steps < 0)[0]) + 1
        raise ValueError(f"records not sorted at {records[bad].timestamp.isoformat()}")

    present = ~np.isnan(records.gap)
    if not present.any():
        raise ImputationError("nothing to average: no present GAP values")

    first = int(idx[0])
    length = int(idx[-1]) - first + 1
    values = np.full(length, np.nan)
    values[idx - first] = records.gap
    missing = np.isnan(values)

    mod = (np.arange(length) + first) % MINUTES_PER_DAY
    sums = np.bincount(mod[~missing], weights=values[~missing], minlength=MINUTES_PER_DAY)
    counts = np.bincount(mod[~missing], minlength=MINUTES_PER_DAY)
    global_mean = values[~missing].mean()
    with np.errstate(invalid="ignore", divide="ignore"):
        profile = np.where(counts > 0, sums / np.maximum(counts, 1), global_mean)
    values[missing] = profile[mod[missing]]

    start = dt.datetime.fromordinal(first // MINUTES_PER_DAY) + dt.timedelta(
        minutes=first % MINUTES_PER_DAY
    )
    return LoadSeries(start, values, missing)


@dataclass(frozen=True)
class NormalizationParams:
    min: float
    max: float

    def __post_init__(self):
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise ValueError("normalization bounds must be finite")
        if not self.max > self.min:
            raise ValueError(f"normalization needs max > min, got min={self.min} max={self.max}")

    @classmethod
    def fit(cls, values) -> "NormalizationParams":
        values = np.asarray(values, dtype=np.float64)
        return cls(float(values.min()), float(values.max()))


def normalize(data, params: NormalizationParams):
    """Min-max scale a LoadSeries or array: ``(v - min) / (max - min)``."""
    if isinstance(data, LoadSeries):
        return data.with_values(normalize(data.values, params))
    return (np.asarray(data, dtype=np.float64) - params.min) / (params.max - params.min)


def denormalize(data, params: NormalizationParams):
    if isinstance(data, LoadSeries):
        return data.with_values(denormalize(data.values, params))
    return np.asarray(data, dtype=np.float64) * (params.max - params.min) + params.min


def slice_weeks(series: LoadSeries, start_date: dt.date, n_weeks: int) -> list[LoadSeries]:
    """Cut ``n_weeks`` consecutive 10,080-minute weeks starting at midnight of ``start_date``."""
    if n_weeks < 0:
        raise ValueError("n_weeks must be >= 0")
    if n_weeks == 0:
        return []
    offset = series.offset_of(dt.datetime.combine(start_date, dt.time()))
    end = offset + n_weeks * MINUTES_PER_WEEK
    if offset < 0 or end > len(series):
        raise IndexError(
            f"{n_weeks} week(s) from {start_date} not covered by series "
            f"{series.start.isoformat()} .. {series.end.isoformat()}"
        )
    return [series.window(offset + k * MINUTES_PER_WEEK, MINUTES_PER_WEEK) for k in range(n_weeks)]


def concat_series(parts: Sequence[LoadSeries]) -> LoadSeries:
    """Join contiguous series; raises if they are not back to back."""
    if not parts:
        raise ValueError("nothing to concatenate")
    for a, b in zip(parts, parts[1:]):
        if a.end != b.start:
            raise ValueError(f"series not contiguous: {a.end} != {b.start}")
    return LoadSeries(
        parts[0].start,
        np.concatenate([p.values for p in parts]),
        np.concatenate([p.imputed_mask for p in parts]),
    )


def export_series_csv(series: LoadSeries, path: Union[str, Path]) -> None:
    """Write ``timestamp_iso8601,gap_kw`` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp_iso8601", "gap_kw"])
        for i, v in enumerate(series.values):
            writer.writerow([series.timestamp(i).isoformat(), repr(float(v))])
