import logging

import numpy as np

from dam.errors import SamplingError
from dam.models import HsrConfig, HsrDraw

logger = logging.getLogger(__name__)


def hsr_weight(x, sigma):
    """Unnormalised long-tail weight 1 / (1 + (x/sigma)^2); works on scalars and arrays"""
    if sigma <= 0:
        raise SamplingError(f"sigma must be positive, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    w = 1.0 / (1.0 + (x / sigma) ** 2)
    return float(w) if w.ndim == 0 else w


def hsr_normalizer(support, sigma):
    """Normalisation constant c: the sum of hsr_weight over the support"""
    support = np.asarray(support)
    if support.size == 0:
        raise SamplingError("empty HSR support")
    return float(np.sum(hsr_weight(support, sigma)))


def hsr_probabilities(support, sigma):
    w = hsr_weight(np.asarray(support), sigma)
    return w / w.sum()


def weighted_sample(support, weights, n, rng):
    """
    Weighted sampling without replacement via exponential keys

    Each item gets key log(u)/w (the log of u**(1/w)); the n largest keys win.
    Returns the chosen support entries in ascending order.
    """
    support = np.asarray(support)
    if n > support.size:
        raise SamplingError(f"requested {n} points but the support only holds {support.size} "
                            f"(short by {n - support.size})")
    if n == support.size:
        return np.sort(support)
    keys = np.log(rng.random(support.size)) / np.asarray(weights, dtype=np.float64)
    chosen = np.argpartition(-keys, n - 1)[:n]
    return np.sort(support[chosen])


def sample_sequential(support, sigma, n, rng):
    """Repeated renormalised draws without replacement (reference sampler)"""
    remaining = np.asarray(support).copy()
    weights = hsr_weight(remaining, sigma)
    if n > remaining.size:
        raise SamplingError(f"requested {n} points but the support only holds {remaining.size}")
    picked = []
    for _ in range(n):
        i = rng.choice(remaining.size, p=weights / weights.sum())
        picked.append(remaining[i])
        remaining = np.delete(remaining, i)
        weights = np.delete(weights, i)
    return np.sort(np.asarray(picked))


def sample_with_replacement(support, sigma, n, rng):
    """Diagnostic sampler: i.i.d. draws from the normalised distribution"""
    support = np.asarray(support)
    return rng.choice(support, size=n, replace=True, p=hsr_probabilities(support, sigma))


def _locate_now(series, now_index):
    if now_index is not None:
        if not 0 <= now_index < len(series):
            raise SamplingError(f"now_index {now_index} outside series of length {len(series)}")
        return now_index
    hits = np.flatnonzero(series.times == 0.0)
    if hits.size != 1:
        raise SamplingError("series is not rebased (no unique time 0); pass now_index")
    return int(hits[0])


def build_support(series, cfg, now_index):
    """Valid step offsets x allowed by the config around 'now'"""
    lo = -now_index if cfg.past is None else max(-now_index, -cfg.past)
    hi = min(cfg.future, len(series) - 1 - now_index)
    offsets = np.arange(lo, hi + 1)
    if not cfg.include_now:
        offsets = offsets[offsets != 0]
    return offsets[series.valid[now_index + offsets]]


def _draw(series, cfg, rng, now_index):
    now = _locate_now(series, now_index)
    support = build_support(series, cfg, now)
    if support.size < cfg.n_points:
        raise SamplingError(f"series '{series.name}' has {support.size} valid points in the support, "
                            f"{cfg.n_points} requested (short by {cfg.n_points - support.size})")
    x = weighted_sample(support, hsr_weight(support, cfg.sigma), cfg.n_points, rng)
    return HsrDraw(indices=x, times=x * series.resolution, values=series.values[now + x])


def sample_context(series, cfg, rng, now_index=None):
    """
    Draw context points from the past (x < 0) without replacement

    Args:
        series: TimeValueSeries, either rebased (time 0 is 'now') or with an explicit now_index
        cfg: HsrConfig with future == 0
        rng: numpy Generator owned by the caller

    Returns:
        HsrDraw with sorted offsets, times (days) and raw values
    """
    if cfg.future != 0 or cfg.include_now:
        raise SamplingError("context draws are restricted to the past")
    return _draw(series, cfg, rng, now_index)


def sample_targets(series, cfg, rng, now_index=None):
    """Draw target points from past and future around 'now'"""
    return _draw(series, cfg, rng, now_index)


def context_config(sigma, n_points, past=None):
    return HsrConfig(sigma=sigma, n_points=n_points, past=past, future=0, include_now=False)


def target_config(sigma, n_points, past=None, future=None):
    return HsrConfig(sigma=sigma, n_points=n_points, past=past,
                     future=np.iinfo(np.int64).max // 4 if future is None else future, include_now=True)


def regular_context(series, n_points, now_index):
    """Fixed-window baseline: the n_points most recent valid past steps"""
    past = np.arange(-now_index, 0)
    past = past[series.valid[now_index + past]]
    if past.size < n_points:
        raise SamplingError(f"only {past.size} valid past points, {n_points} requested")
    x = past[-n_points:]
    return HsrDraw(indices=x, times=x * series.resolution, values=series.values[now_index + x])
