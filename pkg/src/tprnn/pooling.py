"""Time pooling: half-day segments of each week grouped by their slot in the week.

With the default n=720 a week splits into m=14 slots (Monday AM, Monday PM, ...).
Pool ``j`` collects slot ``j`` from every week, so the training set mixes the
same time-of-week across many weeks.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .timeseries_data import MINUTES_PER_WEEK, LoadSeries


class PoolingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Segment:
    week_index: int
    slot_index: int
    values: np.ndarray
    start: dt.datetime | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)

    @property
    def key(self) -> tuple[int, int]:
        return (self.week_index, self.slot_index)


@dataclass(frozen=True, eq=False)
class PoolSet:
    n: int
    m: int
    pools: tuple[tuple[Segment, ...], ...]

    def __post_init__(self):
        pools = tuple(tuple(p) for p in self.pools)
        object.__setattr__(self, "pools", pools)
        if len(pools) != self.m:
            raise PoolingError(f"expected {self.m} pools, got {len(pools)}")
        for j, pool in enumerate(pools):
            for seg in pool:
                if seg.slot_index != j:
                    raise PoolingError(f"segment with slot {seg.slot_index} placed in pool {j}")
                if len(seg) != self.n:
                    raise PoolingError(f"segment length {len(seg)} != n={self.n}")

    def __iter__(self) -> Iterator[tuple[Segment, ...]]:
        return iter(self.pools)

    @property
    def n_segments(self) -> int:
        return sum(len(p) for p in self.pools)

    def segments(self) -> list[Segment]:
        """All segments in chronological (week, slot) order."""
        return sorted((s for p in self.pools for s in p), key=lambda s: s.key)


@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float = 0.67
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise PoolingError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")


@dataclass(frozen=True)
class WindowSample:
    input: np.ndarray
    target: float
    pool_index: int


@dataclass(frozen=True, eq=False)
class WindowSet:
    """Column store of window samples.

    ``week_index``/``offset`` locate each sample's target inside its source
    segment (target sits at ``offset + w``), which gives a chronological key.
    """

    inputs: np.ndarray  # (S, w)
    targets: np.ndarray  # (S,)
    pool_index: np.ndarray  # (S,)
    week_index: np.ndarray = field(default=None)
    offset: np.ndarray = field(default=None)

    def __post_init__(self):
        s = len(self.targets)
        for name in ("week_index", "offset"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, np.zeros(s, dtype=np.int64))

    def __len__(self):
        return len(self.targets)

    @property
    def w(self) -> int:
        return self.inputs.shape[1]

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return WindowSample(self.inputs[i], float(self.targets[i]), int(self.pool_index[i]))
        return WindowSet(
            self.inputs[i], self.targets[i], self.pool_index[i], self.week_index[i], self.offset[i]
        )

    def __iter__(self) -> Iterator[WindowSample]:
        for i in range(len(self)):
            yield self[i]

    def chronological_order(self) -> np.ndarray:
        return np.lexsort((self.offset, self.pool_index, self.week_index))

    @classmethod
    def concat(cls, parts: Sequence["WindowSet"]) -> "WindowSet":
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                     ("inputs", "targets", "pool_index", "week_index", "offset")))


def segment_week(week, n: int, week_index: int = 0) -> list[Segment]:
    """Split one week into consecutive length-``n`` segments."""
    start = week.start if isinstance(week, LoadSeries) else None
    values = week.values if isinstance(week, LoadSeries) else np.asarray(week, dtype=np.float64)
    if n <= 0 or len(values) % n:
        raise PoolingError(f"week length {len(values)} is not divisible by n={n}")
    return [
        Segment(
            week_index,
            k,
            values[k * n : (k + 1) * n],
            None if start is None else start + dt.timedelta(minutes=k * n),
        )
        for k in range(len(values) // n)
    ]


def build_pools(weeks: Sequence, n: int = 720, m: int = 14) -> PoolSet:
    if n * m != MINUTES_PER_WEEK:
        raise PoolingError(f"n*m must equal {MINUTES_PER_WEEK}, got {n}*{m}={n * m}")
    pools: list[list[Segment]] = [[] for _ in range(m)]
    for wi, week in enumerate(weeks):
        if len(week.values if isinstance(week, LoadSeries) else week) != MINUTES_PER_WEEK:
            raise PoolingError(f"week {wi} does not have {MINUTES_PER_WEEK} minutes")
        for seg in segment_week(week, n, wi):
            pools[seg.slot_index].append(seg)
    return PoolSet(n, m, tuple(tuple(p) for p in pools))


def n_train(count: int, train_fraction: float) -> int:
    # round half up; 1e-9 absorbs binary noise such as 0.67 * 100 = 67.00000000000001
    return int(math.floor(train_fraction * count + 0.5 + 1e-9))


def split_pools(pool_set: PoolSet, cfg: SplitConfig) -> tuple[PoolSet, PoolSet]:
    """Chronological split inside every pool: earliest segments train, the rest test."""
    train, test = [], []
    for j, pool in enumerate(pool_set.pools):
        if not pool:
            raise PoolingError(f"pool {j} is empty")
        ordered = sorted(pool, key=lambda s: s.week_index)
        k = n_train(len(ordered), cfg.train_fraction)
        train.append(tuple(ordered[:k]))
        test.append(tuple(ordered[k:]))
    if not any(train) or not any(test):
        raise PoolingError(
            f"train_fraction={cfg.train_fraction} leaves the "
            f"{'training' if not any(train) else 'test'} set empty"
        )
    return (PoolSet(pool_set.n, pool_set.m, tuple(train)),
            PoolSet(pool_set.n, pool_set.m, tuple(test)))


def make_windows(segments: Sequence[Segment] | PoolSet, w: int) -> WindowSet:
    """Stride-1 lookback windows inside each segment (never across segment edges)."""
    if isinstance(segments, PoolSet):
        segments = segments.segments()
    if w < 1:
        raise PoolingError("window length must be >= 1")
    parts = []
    for seg in segments:
        n = len(seg)
        if w >= n:
            raise PoolingError(f"window w={w} must be shorter than segment length {n}")
        views = np.lib.stride_tricks.sliding_window_view(seg.values, w + 1)
        k = len(views)
        parts.append(WindowSet(
            np.ascontiguousarray(views[:, :w]),
            views[:, w].copy(),
            np.full(k, seg.slot_index, dtype=np.int64),
            np.full(k, seg.week_index, dtype=np.int64),
            np.arange(k, dtype=np.int64),
        ))
    if not parts:
        return WindowSet(np.empty((0, w)), np.empty(0), np.empty(0, dtype=np.int64))
    return WindowSet.concat(parts)


def shuffled_batches(windows: WindowSet, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(len(windows))
    for i in range(0, len(order), batch_size):
        yield windows[order[i : i + batch_size]]


def sequential_batches(windows: WindowSet, batch_size: int):
    for i in range(0, len(windows), batch_size):
        yield windows[i : i + batch_size]


def n_batches(n_samples: int, batch_size: int) -> int:
    return -(-n_samples // batch_size)


def pooled_batches(
    train: PoolSet | WindowSet, w: int, batch_size: int, seed: int, epochs: int = 1
) -> Iterator[WindowSet]:
    """Batches drawn across all pools in a seeded shuffle, ``epochs`` passes in a row."""
    windows = train if isinstance(train, WindowSet) else make_windows(train, w)
    if len(windows) == 0:
        raise PoolingError("training set has no samples")
    if batch_size < 1:
        raise PoolingError("batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        yield from shuffled_batches(windows, batch_size, rng)
