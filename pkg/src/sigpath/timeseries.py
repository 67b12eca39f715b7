"""Irregular multivariate time series with explicit missingness.

Missing entries are ``NaN``. Every stored row has at least one observed
entry; subsampling deletes rows that become fully missing.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

SPLITS = ("train", "val", "test")


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class IrregularTimeSeries:
    times: np.ndarray
    values: np.ndarray
    channel_names: tuple

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != times.shape[0]:
            raise DataError(f"{times.shape[0]} times but {values.shape[0]} value rows")
        if times.shape[0] < 1:
            raise DataError("a time series needs at least one row")
        if values.shape[1] != len(self.channel_names) or values.shape[1] < 1:
            raise DataError(f"{values.shape[1]} value columns for channels {self.channel_names}")
        if np.any(np.diff(times) < 0):
            raise DataError("times must be sorted nondecreasing")
        if np.any(np.all(np.isnan(values), axis=1)):
            raise DataError("every row needs at least one observed entry")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def __len__(self) -> int:
        return self.times.shape[0]


@dataclass
class LabeledDataset:
    ids: list
    instances: list
    labels: np.ndarray
    splits: list
    channel_names: tuple
    n_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int).reshape(-1)
        n = len(self.instances)
        if not (len(self.ids) == n == self.labels.shape[0] == len(self.splits)):
            raise DataError("ids, instances, labels and splits must have equal length")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(f"labels must lie in 0..{self.n_classes - 1}")
        for tag in self.splits:
            if tag not in SPLITS:
                raise DataError(f"unknown split tag {tag!r}")
        self.channel_names = tuple(self.channel_names)

    def __len__(self) -> int:
        return len(self.instances)

    def subset(self, *splits: str) -> "LabeledDataset":
        keep = [i for i, s in enumerate(self.splits) if s in splits]
        return self.take(keep)

    def take(self, indices: Sequence[int]) -> "LabeledDataset":
        indices = list(indices)
        return replace(
            self,
            ids=[self.ids[i] for i in indices],
            instances=[self.instances[i] for i in indices],
            labels=self.labels[indices] if indices else np.zeros(0, dtype=int),
            splits=[self.splits[i] for i in indices],
            meta=dict(self.meta),
        )

    def with_instances(self, instances: list) -> "LabeledDataset":
        return replace(self, instances=list(instances), meta=dict(self.meta))


@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray


# ---------------------------------------------------------------------------
# long-format CSV
# ---------------------------------------------------------------------------


def _read_text(source) -> str:
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    return source


def _rows(text: str, expected: Sequence[str], optional: Sequence[str] = ()):
    reader = csv.reader(io.StringIO(text.replace("\r\n", "\n")))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty CSV input") from None
    n_req = len(expected)
    if header[:n_req] != list(expected) or header[n_req:] != list(optional)[: len(header) - n_req]:
        raise DataError(f"bad header {header}; expected {list(expected) + list(optional)}")
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        yield lineno, [c.strip() for c in row], header


def _finite(text: str, what: str, lineno: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"line {lineno}: non-numeric {what} {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"line {lineno}: non-finite {what} {text!r}")
    return value


def parse_series_csv(source, channels: Optional[Sequence[str]] = None) -> tuple:
    """Parse ``id,time,channel,value`` rows.

    Returns ``(series, channel_names)`` where ``series`` maps id to an
    ``IrregularTimeSeries`` (ids in first-appearance order). Channel order is
    ``channels`` when given (other channels are rejected), else sorted.
    """
    text = _read_text(source)
    entries: dict = {}
    seen_channels = set()
    for lineno, (sid, t, ch, v), _ in _rows(text, ("id", "time", "channel", "value")):
        time = _finite(t, "time", lineno)
        value = _finite(v, "value", lineno)
        if channels is not None and ch not in channels:
            raise DataError(f"line {lineno}: unknown channel {ch!r}")
        per_id = entries.setdefault(sid, {})
        row = per_id.setdefault(time, {})
        if ch in row:
            raise DataError(f"line {lineno}: duplicate entry for (id={sid}, time={t}, channel={ch})")
        row[ch] = value
        seen_channels.add(ch)
    names = tuple(channels) if channels is not None else tuple(sorted(seen_channels))
    col = {name: j for j, name in enumerate(names)}
    series = {}
    for sid, rows in entries.items():
        times = sorted(rows)
        values = np.full((len(times), len(names)), np.nan)
        for i, time in enumerate(times):
            for ch, value in rows[time].items():
                values[i, col[ch]] = value
        series[sid] = IrregularTimeSeries(np.array(times), values, names)
    return series, names


def parse_labels_csv(source) -> list:
    """Parse ``id,label[,split]`` rows into ``(id, label, split)`` triples."""
    text = _read_text(source)
    out = []
    seen = set()
    for lineno, row, header in _rows(text, ("id", "label"), ("split",)):
        sid, label = row[0], row[1]
        try:
            label = int(label)
        except ValueError:
            raise DataError(f"line {lineno}: non-integer label {row[1]!r}") from None
        if label < 0:
            raise DataError(f"line {lineno}: negative label {label}")
        split = row[2] if len(header) > 2 else "train"
        if split not in SPLITS:
            raise DataError(f"line {lineno}: unknown split {split!r}")
        if sid in seen:
            raise DataError(f"line {lineno}: duplicate label row for id {sid!r}")
        seen.add(sid)
        out.append((sid, label, split))
    return out


def parse_long_csv(series_source, labels_source, channels: Optional[Sequence[str]] = None) -> LabeledDataset:
    """Load a labelled dataset from a long-format series CSV and a labels CSV."""
    series, names = parse_series_csv(series_source, channels)
    labels = parse_labels_csv(labels_source)
    label_ids = {sid for sid, _, _ in labels}
    for sid, _, _ in labels:
        if sid not in series:
            raise DataError(f"id {sid!r} has a label but no series rows")
    for sid in series:
        if sid not in label_ids:
            raise DataError(f"id {sid!r} has series rows but no label")
    n_classes = max((lab for _, lab, _ in labels), default=-1) + 1
    return LabeledDataset(
        ids=[sid for sid, _, _ in labels],
        instances=[series[sid] for sid, _, _ in labels],
        labels=np.array([lab for _, lab, _ in labels], dtype=int),
        splits=[split for _, _, split in labels],
        channel_names=names,
        n_classes=n_classes,
    )


def to_long_csv(ds: LabeledDataset) -> tuple:
    """Serialize to ``(series_text, labels_text)``; inverse of ``parse_long_csv``."""
    series = io.StringIO()
    writer = csv.writer(series, lineterminator="\n")
    writer.writerow(["id", "time", "channel", "value"])
    for sid, ts in zip(ds.ids, ds.instances):
        for t, row in zip(ts.times, ts.values):
            for name, v in zip(ts.channel_names, row):
                if not np.isnan(v):
                    writer.writerow([sid, repr(float(t)), name, repr(float(v))])
    labels = io.StringIO()
    writer = csv.writer(labels, lineterminator="\n")
    writer.writerow(["id", "label", "split"])
    for sid, label, split in zip(ds.ids, ds.labels, ds.splits):
        writer.writerow([sid, int(label), split])
    return series.getvalue(), labels.getvalue()


# ---------------------------------------------------------------------------
# subsampling
# ---------------------------------------------------------------------------


def _drop_entries(ts: IrregularTimeSeries, drop_fraction: float, rng: np.random.Generator) -> IrregularTimeSeries:
    observed = np.argwhere(ts.observed)  # row-major (row, channel) pairs
    n_drop = int(math.floor(drop_fraction * len(observed) + 0.5))
    if n_drop == 0:
        return ts
    keep = np.zeros(len(observed), dtype=bool)
    for ch in np.unique(observed[:, 1]):
        members = np.flatnonzero(observed[:, 1] == ch)
        keep[members[rng.integers(len(members))]] = True
    candidates = np.flatnonzero(~keep)
    if len(candidates) < n_drop:
        return ts
    dropped = observed[rng.choice(candidates, size=n_drop, replace=False)]
    values = ts.values.copy()
    values[dropped[:, 0], dropped[:, 1]] = np.nan
    rows = ~np.all(np.isnan(values), axis=1)
    return IrregularTimeSeries(ts.times[rows], values[rows], ts.channel_names)


def random_subsample(ds: LabeledDataset, drop_fraction: float, rng: np.random.Generator) -> LabeledDataset:
    """Discard ``round(drop_fraction * count)`` observed entries per instance.

    Entries are scalar ``(time, channel)`` observations chosen uniformly
    without replacement, except that one randomly chosen entry of every
    observed channel is always retained. Instances too small to honour that
    guarantee are left untouched.
    """
    if not 0 <= drop_fraction < 1:
        raise ValueError(f"drop_fraction must lie in [0, 1), got {drop_fraction}")
    return ds.with_instances([_drop_entries(ts, drop_fraction, rng) for ts in ds.instances])


def label_based_subsample(ds: LabeledDataset, lo: float, hi: float, rng: np.random.Generator) -> LabeledDataset:
    """Missing-not-at-random subsampling with one drop rate per class.

    Rates are drawn once per call from ``Uniform(lo, hi)`` in class order and
    stored in ``meta["drop_rates"]``.
    """
    if not 0 <= lo <= hi < 1:
        raise ValueError(f"need 0 <= lo <= hi < 1, got lo={lo}, hi={hi}")
    rates = [float(rng.uniform(lo, hi)) for _ in range(ds.n_classes)]
    out = ds.with_instances(
        [_drop_entries(ts, rates[label], rng) for ts, label in zip(ds.instances, ds.labels)]
    )
    out.meta["drop_rates"] = rates
    return out


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------


def fit_standardizer(ds: LabeledDataset, split: Optional[str] = "train") -> StandardizationStats:
    """Per-channel mean and population std over observed entries.

    With ``split`` set, only instances tagged with it are used (``"train"``
    also pulls in ``"val"``, which is carved out of the training split).
    """
    if split is None:
        source = ds
    elif split == "train":
        source = ds.subset("train", "val")
    else:
        source = ds.subset(split)
    if len(source) == 0:
        raise DataError("cannot fit a standardizer on an empty split")
    stacked = np.vstack([ts.values for ts in source.instances])
    counts = np.sum(~np.isnan(stacked), axis=0)
    if np.any(counts == 0):
        empty = [ds.channel_names[j] for j in np.flatnonzero(counts == 0)]
        raise DataError(f"channels with no observations in the split: {empty}")
    mean = np.nanmean(stacked, axis=0)
    std = np.nanstd(stacked, axis=0)
    std = np.where(std > 0, std, 1.0)
    return StandardizationStats(mean, std)


def apply_standardizer(ds: LabeledDataset, stats: StandardizationStats) -> LabeledDataset:
    if len(stats.mean) != len(ds.channel_names):
        raise DataError(f"stats cover {len(stats.mean)} channels, dataset has {len(ds.channel_names)}")
    return ds.with_instances(
        [replace(ts, values=(ts.values - stats.mean) / stats.std) for ts in ds.instances]
    )


def invert_standardizer(ds: LabeledDataset, stats: StandardizationStats) -> LabeledDataset:
    if len(stats.mean) != len(ds.channel_names):
        raise DataError(f"stats cover {len(stats.mean)} channels, dataset has {len(ds.channel_names)}")
    return ds.with_instances(
        [replace(ts, values=ts.values * stats.std + stats.mean) for ts in ds.instances]
    )


# ---------------------------------------------------------------------------
# time axis
# ---------------------------------------------------------------------------


def sample_grid(start: float, end: float, resolution: float) -> np.ndarray:
    """``start, start + resolution, ...`` up to ``end``, with ``end`` appended."""
    if end < start:
        raise ValueError(f"end {end} precedes start {start}")
    if resolution <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    n = int(math.floor((end - start) / resolution + 1e-9))
    grid = start + resolution * np.arange(n + 1)
    grid = grid[grid <= end]
    tol = 1e-9 * max(1.0, abs(end))
    if end - grid[-1] > tol:
        grid = np.append(grid, end)
    else:
        grid[-1] = min(grid[-1], end)
    return np.unique(grid)


def observed_grid(instances: Iterable[IrregularTimeSeries]) -> np.ndarray:
    """Sorted union of every observed timestamp."""
    return np.unique(np.concatenate([ts.times for ts in instances]))


def time_range(instances: Iterable[IrregularTimeSeries]) -> tuple:
    times = np.concatenate([ts.times for ts in instances])
    return float(times.min()), float(times.max())


def rescale_time(ds: LabeledDataset, start: float, end: float) -> LabeledDataset:
    """Map ``[start, end]`` affinely onto ``[0, 1]``."""
    scale = end - start if end > start else 1.0
    return ds.with_instances([replace(ts, times=(ts.times - start) / scale) for ts in ds.instances])


def snap_to_grid(ts: IrregularTimeSeries, grid: np.ndarray) -> IrregularTimeSeries:
    """Move each row to its nearest grid time, averaging entries that collide."""
    grid = np.asarray(grid, dtype=float)
    pos = np.clip(np.searchsorted(grid, ts.times), 1, max(len(grid) - 1, 1))
    if len(grid) == 1:
        nearest = np.zeros(len(ts), dtype=int)
    else:
        left = grid[pos - 1]
        right = grid[pos]
        nearest = np.where(ts.times - left <= right - ts.times, pos - 1, pos)
    slots = np.unique(nearest)
    values = np.full((len(slots), ts.n_channels), np.nan)
    for out_row, slot in enumerate(slots):
        block = ts.values[nearest == slot]
        counts = np.sum(~np.isnan(block), axis=0)
        sums = np.nansum(block, axis=0)
        values[out_row] = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return IrregularTimeSeries(grid[slots], values, ts.channel_names)


def stratified_holdout(ds: LabeledDataset, fraction: float, rng: np.random.Generator) -> LabeledDataset:
    """Retag ``fraction`` of each class's training instances as ``"val"``."""
    splits = list(ds.splits)
    for c in range(ds.n_classes):
        members = [i for i, (s, y) in enumerate(zip(ds.splits, ds.labels)) if s == "train" and y == c]
        n_val = int(math.floor(fraction * len(members) + 0.5))
        if len(members) - n_val < 1:
            n_val = len(members) - 1
        for i in rng.permutation(members)[: max(n_val, 0)]:
            splits[int(i)] = "val"
    return replace(ds, splits=splits, meta=dict(ds.meta))


def assign_test_split(ds: LabeledDataset, fraction: float, rng: np.random.Generator) -> LabeledDataset:
    """Stratified train/test split for datasets that arrive without one."""
    splits = ["train"] * len(ds)
    for c in range(ds.n_classes):
        members = np.flatnonzero(ds.labels == c)
        n_test = int(math.floor(fraction * len(members) + 0.5))
        for i in rng.permutation(members)[:n_test]:
            splits[int(i)] = "test"
    return replace(ds, splits=splits, meta=dict(ds.meta))
