from dataclasses import dataclass

import numpy as np

from dam.errors import DataError

SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class TimeUnitConfig:
    """
    Converts source ticks into the model's day-based time unit.

    base_seconds is the real duration of one source tick. base_frequency is
    how many seconds the model treats as one day (86400 unless a dataset is
    deliberately rescaled for better basis coverage).
    """
    base_seconds: float
    base_frequency: float = SECONDS_PER_DAY

    def __post_init__(self):
        if self.base_seconds <= 0 or self.base_frequency <= 0:
            raise DataError("time unit seconds must be positive")

    @property
    def scaling(self):
        return SECONDS_PER_DAY / self.base_frequency

    @property
    def tick_days(self):
        return self.base_seconds / SECONDS_PER_DAY * self.scaling

    @classmethod
    def rescaled(cls, base_seconds, time_unit_seconds):
        """One source tick is read as time_unit_seconds of model time"""
        return cls(base_seconds=base_seconds,
                   base_frequency=SECONDS_PER_DAY * base_seconds / time_unit_seconds)

    def ticks_to_days(self, ticks):
        return np.asarray(ticks, dtype=np.float64) * self.tick_days


@dataclass(frozen=True, eq=False)
class TimeValueSeries:
    """One univariate channel with a validity mask"""
    name: str
    times: np.ndarray
    values: np.ndarray
    valid: np.ndarray
    resolution: float

    def __post_init__(self):
        times = np.array(self.times, dtype=np.float64)
        values = np.array(self.values, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if not (len(times) == len(values) == len(valid)):
            raise DataError(f"series '{self.name}': times, values and valid differ in length")
        if self.resolution <= 0:
            raise DataError(f"series '{self.name}': resolution must be positive")
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise DataError(f"series '{self.name}': times are not strictly increasing")
        for arr in (times, values, valid):
            arr.setflags(write=False)
        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'valid', valid)

    def __len__(self):
        return len(self.times)

    @property
    def n_valid(self):
        return int(self.valid.sum())

    def slice(self, start, stop):
        return TimeValueSeries(self.name, self.times[start:stop], self.values[start:stop],
                               self.valid[start:stop], self.resolution)

    def with_values(self, values, valid=None):
        return TimeValueSeries(self.name, self.times, values,
                               self.valid if valid is None else valid, self.resolution)

    def index_of_time(self, t):
        """Nearest integer step offset for a time in days"""
        return int(np.rint(t / self.resolution))


@dataclass(frozen=True)
class DatasetSplit:
    """Contiguous train/valid/test sample-index ranges"""
    train: range
    valid: range
    test: range

    def __post_init__(self):
        if self.train.start != 0 or self.train.stop != self.valid.start or self.valid.stop != self.test.start:
            raise DataError("splits must be contiguous and ordered train < valid < test")
        for r in (self.train, self.valid, self.test):
            if r.stop < r.start:
                raise DataError("split ranges must not be negative")

    @classmethod
    def from_lengths(cls, train, valid, test):
        return cls(range(0, train), range(train, train + valid), range(train + valid, train + valid + test))

    @classmethod
    def from_fractions(cls, n, train=0.7, valid=0.1):
        if not (0 < train < 1 and 0 <= valid < 1 and train + valid <= 1):
            raise DataError("split fractions must lie in (0, 1) and sum to at most 1")
        n_train = int(n * train)
        n_valid = int(n * valid)
        return cls.from_lengths(n_train, n_valid, n - n_train - n_valid)

    @property
    def total(self):
        return self.test.stop

    def get(self, name):
        if name not in ('train', 'valid', 'test'):
            raise DataError(f"unknown split '{name}'")
        return getattr(self, name)
