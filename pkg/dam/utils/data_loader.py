import json
import logging
import os
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from dam.errors import DataError
from dam.models import DatasetSplit, TimeUnitConfig, TimeValueSeries

logger = logging.getLogger(__name__)

MISSING_TOKENS = ('', 'nan', 'NaN', 'NA', 'null')


@dataclass(frozen=True)
class CsvSchema:
    """
    Column layout of a dataset CSV

    Args:
        time_unit: tick duration and model-time scaling
        time_column: name of the timestamp/tick column (None for the first column)
        value_columns: columns to load (None for every other column)
    """
    time_unit: TimeUnitConfig
    time_column: Optional[str] = None
    value_columns: Optional[tuple] = None


def _parse_ticks(raw, time_unit):
    """Integer ticks are canonical; ISO-8601 timestamps are converted to ticks"""
    as_int = pd.to_numeric(raw, errors='coerce')
    if as_int.notna().all():
        return as_int.to_numpy(dtype=np.float64)
    bad_numeric = as_int.isna()
    try:
        stamps = pd.to_datetime(raw, format='ISO8601')
    except (ValueError, TypeError) as e:
        row = int(np.argmax(bad_numeric.to_numpy())) + 1
        raise DataError(f"unparseable timestamp '{raw.iloc[row - 1]}' ({e})", row=row) from None
    seconds = (stamps - stamps.iloc[0]).dt.total_seconds().to_numpy()
    return seconds / time_unit.base_seconds


def load_csv(path, schema):
    """
    Load every value column of a CSV file as a TimeValueSeries

    Args:
        path: CSV file with a header row; the time column holds integer ticks or ISO-8601 timestamps
        schema: CsvSchema

    Returns:
        List of TimeValueSeries (one per value column); empty cells are marked invalid
    """
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as e:
        raise DataError(f"malformed CSV {path}: {e}") from None
    if frame.shape[1] < 2:
        raise DataError(f"{path}: expected a time column and at least one value column")

    time_column = schema.time_column or frame.columns[0]
    if time_column not in frame.columns:
        raise DataError(f"{path}: missing time column '{time_column}'")
    value_columns = list(schema.value_columns or [c for c in frame.columns if c != time_column])

    ticks = _parse_ticks(frame[time_column].str.strip(), schema.time_unit)
    steps = np.diff(ticks)
    if np.any(steps <= 0):
        row = int(np.argmax(steps <= 0)) + 2
        raise DataError("timestamps are not strictly increasing", row=row)
    times = schema.time_unit.ticks_to_days(ticks)

    series = []
    for column in value_columns:
        if column not in frame.columns:
            raise DataError(f"{path}: missing value column '{column}'")
        raw = frame[column].str.strip()
        missing = raw.isin(MISSING_TOKENS).to_numpy()
        values = pd.to_numeric(raw.where(~missing), errors='coerce').to_numpy(dtype=np.float64)
        malformed = np.isnan(values) & ~missing
        if malformed.any():
            row = int(np.argmax(malformed)) + 1
            raise DataError(f"non-numeric value '{raw.iloc[row - 1]}' in column '{column}'", row=row)
        valid = ~missing
        series.append(TimeValueSeries(name=str(column), times=times, values=np.where(valid, values, 0.0),
                                      valid=valid, resolution=schema.time_unit.tick_days))
    logger.info(f"Loaded {len(series)} series with {len(times)} rows from {path}")
    return series


def save_csv(series_list, path, time_unit):
    """Write series sharing one time axis; invalid cells become empty"""
    if not series_list:
        raise DataError("nothing to save")
    times = series_list[0].times
    for s in series_list[1:]:
        if not np.array_equal(s.times, times):
            raise DataError("all series written to one CSV must share their times")
    ticks = times / time_unit.tick_days
    rounded = np.rint(ticks)
    tick_column = rounded.astype(np.int64) if np.allclose(ticks, rounded, rtol=0, atol=1e-6) else ticks
    frame = pd.DataFrame({'tick': tick_column})
    for s in series_list:
        frame[s.name] = np.where(s.valid, s.values, np.nan)
    frame.to_csv(path, index=False, na_rep='', float_format='%.17g')


def rebase_to_now(series, now_index):
    """Shift times so that times[now_index] == 0 (the past is negative)"""
    if not 0 <= now_index < len(series):
        raise DataError(f"now_index {now_index} out of range for series of length {len(series)}")
    return TimeValueSeries(series.name, series.times - series.times[now_index], series.values,
                           series.valid, series.resolution)


@dataclass(frozen=True)
class UtilityBreakdown:
    profile_std: float
    spread: float
    basis: str

    @property
    def utility(self):
        if self.basis == 'overall':
            return self.profile_std
        return self.profile_std * self.spread


def utility_components(series):
    """
    Both ingredients of the sampling utility

    The average day (or week, when a day holds fewer than two samples) is
    the per-phase mean over all full periods. profile_std is the standard
    deviation of that average profile; spread is the mean, over phases, of
    the standard deviation around it.
    """
    values = np.where(series.valid, series.values, np.nan)
    if not series.valid.any():
        return UtilityBreakdown(0.0, 0.0, 'empty')
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', category=RuntimeWarning)
        for basis, period in (('day', 1.0), ('week', 7.0)):
            steps = period / series.resolution
            k = int(round(steps))
            if k < 2 or abs(steps - k) > 1e-6 or len(values) // k < 2:
                continue
            block = values[:(len(values) // k) * k].reshape(-1, k)
            profile = np.nanmean(block, axis=0)
            keep = ~np.isnan(profile)
            if keep.sum() < 2:
                continue
            profile_std = float(np.std(profile[keep]))
            spread = float(np.nanmean(np.nanstd(block[:, keep], axis=0)))
            return UtilityBreakdown(profile_std, spread, basis)
        return UtilityBreakdown(float(np.nanstd(values)), 1.0, 'overall')


def compute_utility(series):
    """Sampling weight of one series: profile std times the spread around it"""
    return utility_components(series).utility


def normalise_utilities(utilities, groups=None, mode='global'):
    """
    Turn raw utilities into sampling probabilities

    Args:
        utilities: raw utility per series
        groups: dataset id per series (needed for mode='dataset')
        mode: 'global' normalises over all series; 'dataset' gives every dataset equal mass

    Returns:
        numpy array of probabilities summing to 1
    """
    u = np.clip(np.asarray(utilities, dtype=np.float64), 0.0, None)
    if u.size == 0:
        raise DataError("no utilities to normalise")
    if mode == 'global':
        if u.sum() <= 0:
            logger.warning("All utilities are zero; sampling series uniformly")
            return np.full(u.size, 1.0 / u.size)
        return u / u.sum()
    if mode != 'dataset':
        raise DataError(f"unknown utility normalisation '{mode}'")
    if groups is None or len(groups) != u.size:
        raise DataError("dataset normalisation needs one group id per series")
    groups = np.asarray(groups)
    names = list(dict.fromkeys(groups.tolist()))
    probs = np.zeros_like(u)
    for name in names:
        member = groups == name
        total = u[member].sum()
        probs[member] = u[member] / total if total > 0 else 1.0 / member.sum()
    return probs / len(names)


def fill_missing_for_export(series):
    """Zero-filled values for external tools that cannot take a mask"""
    return np.where(series.valid, series.values, 0.0)


def synthetic_series(n, resolution=1.0 / 24, components=((1.0, 1.0, 0.0), (7.0, 0.5, 0.3)),
                     trend=0.0, noise_std=0.0, seed=0, name='synthetic', mask_rate=0.0):
    """
    Regular synthetic channel: sum of sinusoids + linear trend + Gaussian noise

    Args:
        n: number of samples
        resolution: days between samples
        components: (period_days, amplitude, phase) triples
        trend: slope per day
        noise_std: standard deviation of the additive noise
        seed: generator seed
        mask_rate: fraction of samples marked invalid
    """
    rng = np.random.default_rng(seed)
    times = np.arange(n) * resolution
    values = trend * times
    for period, amplitude, phase in components:
        values = values + amplitude * np.sin(2 * np.pi * times / period + phase)
    if noise_std > 0:
        values = values + rng.normal(0.0, noise_std, size=n)
    valid = np.ones(n, dtype=bool)
    if mask_rate > 0:
        valid[rng.choice(n, size=int(n * mask_rate), replace=False)] = False
    return TimeValueSeries(name, times, values, valid, resolution)


@dataclass
class Dataset:
    name: str
    series: List[TimeValueSeries]
    split: DatasetSplit
    time_unit: TimeUnitConfig

    def split_series(self, name):
        """Per-channel views restricted to one split"""
        r = self.split.get(name)
        return [s.slice(r.start, r.stop) for s in self.series]

    def history_until(self, split_name):
        """Per-channel views from the start up to the end of a split (context may reach back)"""
        stop = self.split.get(split_name).stop
        return [s.slice(0, stop) for s in self.series]


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    path: str
    resolution_seconds: float
    time_unit_seconds: Optional[float] = None
    split_lengths: Optional[tuple] = None
    split_fractions: tuple = (0.7, 0.1)
    columns: Optional[tuple] = None

    @property
    def time_unit(self):
        if self.time_unit_seconds:
            return TimeUnitConfig.rescaled(self.resolution_seconds, self.time_unit_seconds)
        return TimeUnitConfig(base_seconds=self.resolution_seconds)

    def load(self):
        schema = CsvSchema(time_unit=self.time_unit, value_columns=self.columns)
        series = load_csv(self.path, schema)
        n = len(series[0])
        if self.split_lengths:
            split = DatasetSplit.from_lengths(*self.split_lengths)
            if split.total > n:
                raise DataError(f"{self.name}: split lengths sum to {split.total} but the data has {n} rows")
        else:
            split = DatasetSplit.from_fractions(n, *self.split_fractions)
        return Dataset(self.name, series, split, self.time_unit)


_MANIFEST_KEYS = {'name', 'path', 'resolution_seconds', 'time_unit_seconds', 'splits', 'columns'}


def _parse_manifest_entry(entry, base_dir):
    unknown = set(entry) - _MANIFEST_KEYS
    if unknown:
        raise DataError(f"unknown manifest keys: {', '.join(sorted(unknown))}")
    try:
        name, path, resolution = entry['name'], entry['path'], float(entry['resolution_seconds'])
    except KeyError as e:
        raise DataError(f"manifest entry missing {e}") from None
    splits = entry.get('splits', {})
    columns = entry.get('columns')
    return DatasetManifest(
        name=name,
        path=path if os.path.isabs(path) else os.path.join(base_dir, path),
        resolution_seconds=resolution,
        time_unit_seconds=entry.get('time_unit_seconds'),
        split_lengths=tuple(splits['lengths']) if 'lengths' in splits else None,
        split_fractions=tuple(splits.get('fractions', (0.7, 0.1))),
        columns=tuple(columns) if columns else None,
    )


def load_manifest(path):
    """
    Read a dataset manifest (JSON): a single dataset entry or {"datasets": [...]}

    Returns:
        List of DatasetManifest
    """
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read manifest {path}: {e}") from None
    base_dir = os.path.dirname(os.path.abspath(path))
    entries = data['datasets'] if isinstance(data, dict) and 'datasets' in data else [data]
    return [_parse_manifest_entry(e, base_dir) for e in entries]
