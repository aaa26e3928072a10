import logging

import numpy as np
import pandas as pd
from scipy import linalg

from dam.errors import BasisError
from dam.models import AffineParams, BasisSpec, CoefficientVector, ForecastFunction, RobustNorm
from dam.models.basis import IQR_FLOOR

logger = logging.getLogger(__name__)

FREQUENCY_SET_VERSION = 'mhdwy-437-v1'
DAYS_PER_YEAR = 52 * 7

# Periods per class, in the unit of the class
MINUTE_PERIODS = [1, 6, 11, 16, 21, 25, 31, 36, 41, 45, 50, 55]
HOUR_PERIODS = [
    1.0, 1.2, 1.5, 1.7, 2.0, 2.2, 2.5, 2.7, 3.0, 3.2, 3.5, 3.7, 4.0, 4.2, 4.5, 4.8, 5.0, 5.2, 5.5, 5.8,
    6.0, 6.3, 6.5, 6.7, 7.0, 7.3, 7.5, 7.8, 8.0, 8.2, 8.5, 8.7, 9.0, 9.2, 9.5, 9.7, 10.0, 10.3, 10.5,
    10.7, 11.0, 11.2, 11.5, 11.8, 12.0, 12.2, 12.5, 12.7, 13.0, 13.2, 13.5, 13.7, 14.0, 14.2, 14.5,
    14.8, 15.0, 15.3, 15.5, 15.7, 16.0, 16.2, 16.5, 16.8, 17.0, 17.2, 17.5, 17.8, 18.0, 18.3, 18.5,
    18.8, 19.0, 19.3, 19.5, 19.7, 20.0, 20.2, 20.5, 20.8, 21.0, 21.2, 21.5, 21.8, 22.0, 22.3, 22.5,
    22.7, 23.0, 23.3, 23.5, 23.7,
]
DAY_PERIODS = [
    1.00, 1.01, 1.02, 1.03, 1.04, 1.05, 1.06, 1.07, 1.08, 1.09, 1.10, 1.11, 1.12, 1.14, 1.15, 1.16,
    1.17, 1.18, 1.19, 1.20, 1.21, 1.22, 1.23, 1.24, 1.25, 1.26, 1.27, 1.28, 1.29, 1.30, 1.31, 1.32,
    1.33, 1.34, 1.35, 1.36, 1.37, 1.39, 1.40, 1.41, 1.42, 1.43, 1.44, 1.45, 1.46, 1.47, 1.48, 1.49,
    1.50, 1.51, 1.52, 1.53, 1.54, 1.55, 1.56, 1.57, 1.58, 1.59, 1.60, 1.61, 1.62, 1.64, 1.65, 1.66,
    1.67, 1.68, 1.69, 1.70, 1.71, 1.72, 1.73, 1.74, 1.75, 1.76, 1.77, 1.78, 1.79, 1.80, 1.81, 1.82,
    1.83, 1.84, 1.85, 1.86, 1.87, 1.89, 1.90, 1.91, 1.92, 1.93, 1.94, 1.95, 1.96, 1.97, 1.98, 1.99,
    2.00, 2.25, 2.50, 2.75, 3.00, 3.25, 3.50, 3.75, 4.00, 4.25, 4.50, 4.75, 5.00, 5.25, 5.50, 5.75,
    6.00, 6.25, 6.50, 6.75, 7.00,
]
WEEK_PERIODS = [
    1.04, 1.07, 1.11, 1.14, 1.18, 1.21, 1.25, 1.29, 1.32, 1.36, 1.39, 1.43, 1.46, 1.50, 1.54, 1.57,
    1.61, 1.64, 1.68, 1.71, 1.75, 1.79, 1.82, 1.86, 1.89, 1.93, 1.96, 2.00, 2.04, 2.07, 2.11, 2.14,
    2.18, 2.21, 2.25, 2.29, 2.32, 2.36, 2.39, 2.43, 2.46, 2.50, 2.54, 2.57, 2.61, 2.64, 2.68, 2.71,
    2.75, 2.79, 2.82, 2.86, 2.89, 2.93, 2.96, 3.00, 3.04, 3.07, 3.11, 3.14, 3.18, 3.21, 3.25, 3.29,
    3.32, 3.36, 3.39, 3.43, 3.46, 3.50, 3.54, 3.57, 3.61, 3.64, 3.68, 3.71, 3.75, 3.79, 3.82, 3.86,
    3.89, 3.93, 3.96, 4.00, 4.50, 5.00, 5.50, 6.00, 6.50, 7.00, 7.50, 8.00, 8.50, 9.00, 9.50, 10.00,
    10.50, 11.00, 11.50, 12.00, 12.50, 13.00, 13.50, 14.00, 14.50, 15.00, 15.50, 16.00, 16.50, 17.00,
    17.50, 18.00, 18.50, 19.00, 19.50, 20.00, 20.50, 21.00, 21.50, 22.00, 22.50, 23.00, 23.50, 24.00,
    24.50, 25.00, 25.50, 26.00, 26.50, 27.00, 27.50, 28.00, 28.50, 29.00, 29.50, 30.00, 30.50, 31.00,
    31.50, 32.00, 32.50, 33.00, 33.50, 34.00, 34.50, 35.00, 35.50, 36.00, 36.50, 37.00, 37.50, 38.00,
    38.50, 39.00, 39.50, 40.00, 40.50, 41.00, 41.50, 42.00, 42.50, 43.00, 43.50, 44.00, 44.50, 45.00,
    45.50, 46.00, 46.50, 47.00, 47.50, 48.00, 48.50, 49.00, 49.50, 50.00, 50.50, 51.00, 51.50, 52.00,
]
YEAR_PERIODS = [
    1.25, 1.50, 1.75, 2.00, 2.25, 2.50, 2.75, 3.00, 3.25, 3.50, 3.75, 4.00, 4.25, 4.50, 4.75, 5.00,
    5.25, 5.50, 5.75, 6.00, 6.25, 6.50, 6.75, 7.00, 7.25, 7.50, 7.75, 8.00, 8.25, 8.50, 8.75, 9.00,
    9.25, 9.50, 9.75, 10.00,
]

# (class name, periods, days per unit)
PERIOD_CLASSES = (
    ('minutes', MINUTE_PERIODS, 1.0 / 1440),
    ('hours', HOUR_PERIODS, 1.0 / 24),
    ('days', DAY_PERIODS, 1.0),
    ('weeks', WEEK_PERIODS, 7.0),
    ('years', YEAR_PERIODS, float(DAYS_PER_YEAR)),
)


def build_frequency_set():
    """
    The fixed 437-frequency basis, ordered minutes, hours, days, weeks, years

    Returns:
        BasisSpec with frequencies in cycles per day
    """
    periods, classes = [], []
    for name, values, unit_days in PERIOD_CLASSES:
        periods.extend(v * unit_days for v in values)
        classes.extend([name] * len(values))
    frequencies = 1.0 / np.asarray(periods, dtype=np.float64)
    frequencies.setflags(write=False)
    return BasisSpec(frequencies=frequencies, classes=tuple(classes), version=FREQUENCY_SET_VERSION)


def robust_quantiles(values, qs):
    """Quantiles with linear interpolation between order statistics (project-wide convention)"""
    return np.quantile(np.asarray(values, dtype=np.float64), qs, method='linear', axis=-1)


def robust_standardize(values):
    """
    Median/IQR standardisation

    Returns:
        (standardised values, RobustNorm); the IQR is floored at 1e-6
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise BasisError("cannot standardise an empty vector")
    q25, med, q75 = robust_quantiles(values, [0.25, 0.5, 0.75])
    norm = RobustNorm(med=med, iqr=max(q75 - q25, IQR_FLOOR))
    return norm.apply(values), norm


def design_matrix(times, frequencies):
    """[sin | cos] columns of every frequency at every time, shape [n, 2F]"""
    phase = 2 * np.pi * np.outer(np.asarray(times, dtype=np.float64), frequencies)
    return np.concatenate((np.sin(phase), np.cos(phase)), axis=1)


def _regulariser(gram, lam):
    reg = np.full(gram.shape[0], float(lam))
    reg[0] = 0.0
    if lam > 0 and gram[0, 0] < 1e-10 * np.mean(np.diag(gram)):
        # first column vanishes on this time grid; leaving it unregularised makes the system singular
        logger.debug("First basis column is degenerate on these times; regularising it as well")
        reg[0] = lam
    return reg


def solve_normal_equations(X, v, lam):
    """
    Solve (X^T X + lam*I') theta = X^T v, with I' the identity whose (0, 0) entry is zero

    Cholesky on the regularised (SPD) matrix, LDL^T when that fails.
    """
    gram = X.T @ X
    rhs = X.T @ v
    if lam == 0 and np.linalg.matrix_rank(X) < X.shape[1]:
        raise BasisError(f"rank deficient design: rank {np.linalg.matrix_rank(X)} < {X.shape[1]} "
                         f"with {X.shape[0]} points and no regularisation")
    system = gram + np.diag(_regulariser(gram, lam))
    try:
        factor = linalg.cho_factor(system, lower=True, check_finite=False)
        return linalg.cho_solve(factor, rhs, check_finite=False)
    except linalg.LinAlgError:
        logger.debug("Cholesky failed; falling back to LDL^T")
    try:
        return linalg.solve(system, rhs, assume_a='sym', check_finite=False)
    except linalg.LinAlgError as e:
        raise BasisError(f"rank deficient normal equations: {e}") from None


def init_theta(times, values, spec, lam=1.0):
    """
    Initial coefficients theta_0 fit to (standardised) context values by ridge regression

    Args:
        times: times in days
        values: standardised values, same length as times
        spec: BasisSpec
        lam: ridge strength (>= 0)

    Returns:
        CoefficientVector
    """
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if times.shape != values.shape or times.size == 0:
        raise BasisError(f"times and values must be non-empty and equal length, "
                         f"got {times.shape} and {values.shape}")
    if lam < 0:
        raise BasisError("lambda must be non-negative")
    n_freq = len(spec)
    theta = solve_normal_equations(design_matrix(times, spec.frequencies), values, lam)
    return CoefficientVector.from_sin_cos(sin=theta[:n_freq], cos=theta[n_freq:])


def raw_composition(theta, frequencies, query_times):
    """Sum over frequencies of sin/cos terms, before normalisation and affine"""
    phase = 2 * np.pi * np.outer(np.asarray(query_times, dtype=np.float64), frequencies)
    return np.sin(phase) @ theta.sin + np.cos(phase) @ theta.cos


def evaluate(fn, query_times, parameterization='backbone'):
    """
    Evaluate a ForecastFunction at arbitrary times (days, past or future)

    'backbone': iqr * ((raw - b) / a) + med, the ordering used for model output
    'composition': iqr * (a * raw - b) + med
    The two agree whenever a = 1 and b = 0 (theta_0-only functions).
    """
    query_times = np.asarray(query_times, dtype=np.float64)
    raw = raw_composition(fn.theta, fn.spec.frequencies, query_times.ravel())
    if parameterization == 'backbone':
        adjusted = (raw - fn.affine.b) / fn.affine.safe_scale
    elif parameterization == 'composition':
        adjusted = fn.affine.a * raw - fn.affine.b
    else:
        raise BasisError(f"unknown parameterization '{parameterization}'")
    return fn.norm.invert(adjusted).reshape(query_times.shape)


def fit_forecast_function(times, values, spec, lam=1.0):
    """theta_0-only ForecastFunction (a=1, b=0) for a set of raw time-value pairs"""
    standardized, norm = robust_standardize(values)
    return ForecastFunction(spec=spec, theta=init_theta(times, standardized, spec, lam), norm=norm)


def imputation_fit(series, mask, window, lam=1.0, spec=None, hsr=None, rng=None):
    """
    Fit theta_0 to the unmasked points of a window

    Args:
        series: TimeValueSeries
        mask: boolean array over the series, True where a step is hidden
        window: range of series indices to fit over
        lam: ridge strength
        spec: BasisSpec (built on demand)
        hsr: optional HsrConfig; subsample unmasked points around the window centre instead of using all
        rng: generator for the HSR mode

    Returns:
        ForecastFunction; evaluate it at the masked times to impute
    """
    spec = spec or build_frequency_set()
    idx = np.arange(window.start, window.stop)
    keep = idx[~np.asarray(mask)[idx] & series.valid[idx]]
    if keep.size == 0:
        raise BasisError(f"window {window.start}:{window.stop} is fully masked")
    if hsr is not None:
        from dam.ml.hsr import hsr_weight, weighted_sample
        centre = (window.start + window.stop) // 2
        offsets = keep - centre
        n = min(hsr.n_points, offsets.size)
        keep = centre + weighted_sample(offsets, hsr_weight(offsets, hsr.sigma), n, rng)
    return fit_forecast_function(series.times[keep], series.values[keep], spec, lam)


def composition_by_frequency(fn, query_times, fraction):
    """Evaluate using only the lowest-frequency `fraction` of the basis"""
    order = np.argsort(fn.spec.frequencies)
    n_keep = int(np.ceil(np.clip(fraction, 0.0, 1.0) * len(order)))
    theta = np.zeros_like(fn.theta.theta)
    theta[order[:n_keep]] = fn.theta.theta[order[:n_keep]]
    partial = ForecastFunction(fn.spec, CoefficientVector(theta), fn.norm, fn.affine)
    return evaluate(partial, query_times)


def coefficient_amplitudes(theta, spec):
    """Per-period amplitude table for interpretability exports"""
    return pd.DataFrame({
        'period_days': spec.periods,
        'class': list(spec.classes),
        'sin': theta.sin,
        'cos': theta.cos,
        'amplitude': theta.amplitudes,
    })


def to_record(fn):
    """Flat record: version tag, med, iqr, a, b, then cos_i and sin_i for every frequency"""
    record = {'version': fn.spec.version, 'med': fn.norm.med, 'iqr': fn.norm.iqr,
              'a': fn.affine.a, 'b': fn.affine.b}
    for i, (c, s) in enumerate(zip(fn.theta.cos, fn.theta.sin)):
        record[f'cos_{i}'] = float(c)
        record[f'sin_{i}'] = float(s)
    return record


def from_record(record, spec=None):
    spec = spec or build_frequency_set()
    if record['version'] != spec.version:
        raise BasisError(f"frequency set version mismatch: {record['version']} != {spec.version}")
    n = len(spec)
    cos = np.array([record[f'cos_{i}'] for i in range(n)], dtype=np.float64)
    sin = np.array([record[f'sin_{i}'] for i in range(n)], dtype=np.float64)
    return ForecastFunction(spec=spec, theta=CoefficientVector.from_sin_cos(sin, cos),
                            norm=RobustNorm(record['med'], record['iqr']),
                            affine=AffineParams(float(record['a']), float(record['b'])))
