from dataclasses import dataclass

import numpy as np

IQR_FLOOR = 1e-6
SCALE_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class BasisSpec:
    """Fixed frequency set (cycles per day) with the period class of each entry"""
    frequencies: np.ndarray
    classes: tuple
    version: str

    def __len__(self):
        return len(self.frequencies)

    @property
    def periods(self):
        return 1.0 / self.frequencies


@dataclass(frozen=True)
class RobustNorm:
    med: float
    iqr: float

    def __post_init__(self):
        object.__setattr__(self, 'iqr', max(float(self.iqr), IQR_FLOOR))
        object.__setattr__(self, 'med', float(self.med))

    def apply(self, values):
        return (np.asarray(values, dtype=np.float64) - self.med) / self.iqr

    def invert(self, values):
        return np.asarray(values, dtype=np.float64) * self.iqr + self.med


@dataclass(frozen=True, eq=False)
class CoefficientVector:
    """
    Basis coefficients stored as [n_freq, 2] with column 0 = cos and
    column 1 = sin; use the named accessors rather than raw columns.
    """
    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        if theta.ndim != 2 or theta.shape[1] != 2:
            raise ValueError(f"theta must have shape [n_freq, 2], got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta contains non-finite entries")
        object.__setattr__(self, 'theta', theta)

    @classmethod
    def from_sin_cos(cls, sin, cos):
        return cls(np.stack((np.asarray(cos), np.asarray(sin)), axis=-1))

    @property
    def cos(self):
        return self.theta[:, 0]

    @property
    def sin(self):
        return self.theta[:, 1]

    @property
    def amplitudes(self):
        return np.hypot(self.sin, self.cos)


@dataclass(frozen=True)
class AffineParams:
    """Affine adjustment; a is the scale, b the offset"""
    a: float = 1.0
    b: float = 0.0

    @property
    def safe_scale(self):
        if abs(self.a) >= SCALE_FLOOR:
            return float(self.a)
        return SCALE_FLOOR if self.a >= 0 else -SCALE_FLOOR


@dataclass(frozen=True, eq=False)
class ForecastFunction:
    """Closed-form forecast: evaluable at any real time in days"""
    spec: BasisSpec
    theta: CoefficientVector
    norm: RobustNorm
    affine: AffineParams = AffineParams()

    def __call__(self, query_times):
        from dam.ml.basis import evaluate
        return evaluate(self, query_times)
