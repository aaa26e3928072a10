from dataclasses import dataclass

import numpy as np

from dam.errors import SamplingError


@dataclass(frozen=True)
class HsrConfig:
    """
    History sampling regime parameters.

    Args:
        sigma: distribution width; smaller values favour the recent past
        n_points: number of indices drawn without replacement
        past: furthest step offset into the past (None for all available history)
        future: furthest step offset into the future (0 for context draws)
        include_now: whether offset 0 belongs to the support
    """
    sigma: float
    n_points: int
    past: int = None
    future: int = 0
    include_now: bool = False

    def __post_init__(self):
        if self.sigma <= 0:
            raise SamplingError(f"sigma must be positive, got {self.sigma}")
        if self.n_points <= 0:
            raise SamplingError(f"n_points must be positive, got {self.n_points}")
        if self.future < 0 or (self.past is not None and self.past < 0):
            raise SamplingError("support extents must be non-negative")


@dataclass(frozen=True, eq=False)
class HsrDraw:
    """Sampled step offsets (x) and the time-value pairs built from them"""
    indices: np.ndarray
    times: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.indices)

    @property
    def pairs(self):
        return list(zip(self.times.tolist(), self.values.tolist()))
