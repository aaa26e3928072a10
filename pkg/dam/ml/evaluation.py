"""
Evaluation protocols: sliding-window forecasting metrics, HSR tuning,
imputation, inference cost and component ablation.
"""
import dataclasses
import logging
import time
from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.preprocessing import StandardScaler

from dam.errors import EvaluationError, SamplingError
from dam.ml import autograd as ag
from dam.ml.basis import build_frequency_set, evaluate, fit_forecast_function, imputation_fit
from dam.ml.hsr import context_config, sample_context
from dam.ml.network import SKIPPABLE

logger = logging.getLogger(__name__)

METRICS = ('mse', 'mae', 'nmse', 'nmae')
IMPUTATION_RATES = (0.125, 0.25, 0.375, 0.5)
IMPUTATION_WINDOW = 1440

ABLATION_NAMES = {
    'self-attn': 'self_attn', 'cross-attn': 'cross_attn', 'ff-tv': 'ff_tv', 'ff-b': 'ff_b',
    'ff-b-cross': 'ff_b_cross', 'ff-affine': 'ff_affine', 'tome': 'tome',
}


class ModelForecaster:
    """Forecaster backed by a DamModel: contexts in, forecasts at query times out"""

    def __init__(self, model, tome_target=None, skip=(), lam=1.0):
        self.model = model
        self.tome_target = tome_target
        self.skip = tuple(skip)
        self.lam = lam
        self.token_counts = None

    def __call__(self, contexts, query_times):
        with ag.no_grad():
            batch = self.model.context_batch(contexts, self.lam)
            output = self.model.forward(batch, skip=self.skip, tome_target=self.tome_target)
        self.token_counts = output.token_counts
        return self.model.forecast(output, query_times)


class ThetaZeroForecaster:
    """theta_0-only baseline: the initial ridge fit extrapolated as is"""

    def __init__(self, spec=None, lam=1.0):
        self.spec = spec or build_frequency_set()
        self.lam = lam

    def __call__(self, contexts, query_times):
        return np.stack([evaluate(fit_forecast_function(c.times, c.values, self.spec, self.lam), q)
                         for c, q in zip(contexts, np.asarray(query_times))])


@dataclass
class MetricReport:
    """Long-format metric table: one row per dataset, horizon and metric"""
    frame: pd.DataFrame

    @classmethod
    def from_rows(cls, rows):
        return cls(pd.DataFrame(rows, columns=['dataset', 'horizon', 'metric', 'value']))

    def value(self, horizon, metric, dataset=None):
        f = self.frame[(self.frame.horizon == horizon) & (self.frame.metric == metric)]
        if dataset is not None:
            f = f[f.dataset == dataset]
        if f.empty:
            raise EvaluationError(f"no {metric} recorded for horizon {horizon}")
        return float(f.value.mean())

    def wide(self):
        return self.frame.pivot_table(index=['dataset', 'horizon'], columns='metric', values='value')

    def to_csv(self, path):
        self.frame.to_csv(path, index=False)


def channel_scaler(series):
    """StandardScaler fit on the valid values of a (train split) channel"""
    scaler = StandardScaler()
    scaler.fit(series.values[series.valid].reshape(-1, 1))
    return scaler


def _scale(scaler, values):
    return scaler.transform(np.asarray(values).reshape(-1, 1)).reshape(np.shape(values))


def window_anchors(series, split_range, context_size, horizon, stride=1, max_windows=None):
    """'now' indices inside a split with a full horizon ahead and enough valid history behind"""
    past_valid = np.concatenate(([0], np.cumsum(series.valid)[:-1]))
    last = split_range.stop - horizon
    anchors = np.arange(split_range.start, last + 1, stride)
    anchors = anchors[past_valid[anchors] >= context_size] if anchors.size else anchors
    if max_windows is not None and anchors.size > max_windows:
        anchors = anchors[np.linspace(0, anchors.size - 1, max_windows).round().astype(int)]
    return anchors


class _Accumulator:
    def __init__(self, horizons):
        self.horizons = horizons
        self.sq = dict.fromkeys(horizons, 0.0)
        self.ab = dict.fromkeys(horizons, 0.0)
        self.v2 = dict.fromkeys(horizons, 0.0)
        self.v1 = dict.fromkeys(horizons, 0.0)
        self.n = dict.fromkeys(horizons, 0)

    def add(self, pred, truth, valid):
        for h in self.horizons:
            e = (pred[:, :h] - truth[:, :h])[valid[:, :h]]
            t = truth[:, :h][valid[:, :h]]
            self.sq[h] += float(np.sum(e ** 2))
            self.ab[h] += float(np.sum(np.abs(e)))
            self.v2[h] += float(np.sum(t ** 2))
            self.v1[h] += float(np.sum(np.abs(t)))
            self.n[h] += int(e.size)

    def metrics(self, h, normalize=True):
        n = self.n[h]
        if n == 0:
            raise EvaluationError(f"no valid targets for horizon {h}")
        mse, mae = self.sq[h] / n, self.ab[h] / n
        if normalize:
            l2, l1 = self.v2[h] / n, self.v1[h] / n
            nmse = mse / l2 if l2 > 0 else float('nan')
            nmae = mae / l1 if l1 > 0 else float('nan')
        else:
            nmse, nmae = mse, mae
        return {'mse': mse, 'mae': mae, 'nmse': nmse, 'nmae': nmae}


def forecast_windows(forecaster, series, anchors, protocol, rng):
    """Predictions [W, H_max] for every anchor, one forward pass per window"""
    cfg = context_config(protocol.sigma, protocol.context_size)
    query = np.arange(protocol.max_horizon) * series.resolution
    preds = []
    for start in range(0, anchors.size, protocol.minibatch):
        chunk = anchors[start:start + protocol.minibatch]
        contexts = [sample_context(series, cfg, rng, now_index=int(now)) for now in chunk]
        preds.append(forecaster(contexts, np.tile(query, (len(chunk), 1))))
    return np.concatenate(preds, axis=0)


def evaluate_forecast(forecaster, dataset, protocol, normalize=True):
    """
    Sliding-window forecasting metrics over one split of a dataset

    Every channel is forecast separately; per window the context is an HSR
    draw from the history before 'now' and the targets are the next H steps
    (from 'now' on). Errors are measured after scaling with the train split's
    mean and standard deviation. Metrics are per channel, then averaged over
    channels and seeds.

    Args:
        forecaster: callable (contexts, query_times [M, Q]) -> forecasts [M, Q]
        dataset: dam.utils.data_loader.Dataset
        protocol: EvalProtocol
        normalize: False forces the NMSE/NMAE normalisers to 1

    Returns:
        MetricReport
    """
    split_range = dataset.split.get(protocol.split)
    horizon = protocol.max_horizon
    histories = dataset.history_until(protocol.split)
    train_views = dataset.split_series('train')
    per_channel = []
    for series, train_view in zip(histories, train_views):
        anchors = window_anchors(series, split_range, protocol.context_size, horizon,
                                 protocol.stride, protocol.max_windows)
        if anchors.size == 0:
            raise EvaluationError(f"{dataset.name}/{series.name}: {protocol.split} split too short for "
                                  f"context {protocol.context_size} + horizon {horizon}")
        scaler = channel_scaler(train_view if train_view.n_valid > 1 else series)
        steps = anchors[:, None] + np.arange(horizon)
        truth = _scale(scaler, series.values[steps])
        valid = series.valid[steps]
        seed_metrics = []
        for seed in protocol.seeds:
            rng = np.random.default_rng(seed)
            pred = _scale(scaler, forecast_windows(forecaster, series, anchors, protocol, rng))
            acc = _Accumulator(protocol.horizons)
            acc.add(pred, truth, valid)
            seed_metrics.append({h: acc.metrics(h, normalize) for h in protocol.horizons})
        per_channel.append(seed_metrics)
        logger.debug(f"{dataset.name}/{series.name}: {anchors.size} windows")

    rows = []
    for h in protocol.horizons:
        for metric in METRICS:
            values = [m[h][metric] for channel in per_channel for m in channel]
            rows.append([dataset.name, h, metric, float(np.mean(values))])
    report = MetricReport.from_rows(rows)
    logger.info(f"{dataset.name}: " + ', '.join(
        f"H{h} MSE {report.value(h, 'mse'):.4f}" for h in protocol.horizons))
    return report


@dataclass
class TuneResult:
    context_size: int
    sigma: float
    heatmap: pd.DataFrame

    def to_csv(self, path):
        self.heatmap.to_csv(path, index_label='context_size')


def tune_hsr(forecaster, dataset, context_sizes, sigmas, protocol):
    """
    Grid search over context size x sigma on the validation split

    The ToME target follows the training ratio for each context size. Ties
    go to the smaller context.

    Returns:
        TuneResult with the MSE heatmap (rows = context size, columns = sigma)
    """
    context_sizes, sigmas = sorted(set(context_sizes)), sorted(set(sigmas))
    if not context_sizes or not sigmas:
        raise EvaluationError("empty tuning grid")
    if getattr(forecaster, 'tome_target', None) is not None:
        raise EvaluationError("an absolute ToME target cannot be tuned over context sizes; "
                              "every grid cell uses the training ratio")
    heatmap = pd.DataFrame(index=pd.Index(context_sizes, name='context_size'),
                           columns=pd.Index(sigmas, name='sigma'), dtype=float)
    best = None
    for c in context_sizes:
        for s in sigmas:
            cell = dataclasses.replace(protocol, context_size=c, sigma=s, split='valid', tome_target=None)
            report = evaluate_forecast(forecaster, dataset, cell)
            mse = float(np.mean([report.value(h, 'mse') for h in cell.horizons]))
            heatmap.loc[c, s] = mse
            if best is None or mse < best[0]:
                best = (mse, c, s)
            logger.info(f"tune: context {c} sigma {s}: MSE {mse:.5f}")
    return TuneResult(context_size=best[1], sigma=best[2], heatmap=heatmap)


def draw_mask_columns(n_steps, rate, rng):
    """Boolean mask over time steps (whole columns: every variable at a drawn step)"""
    if not 0.0 <= rate < 1.0:
        raise EvaluationError(f"mask rate must lie in [0, 1), got {rate}")
    mask = np.zeros(n_steps, dtype=bool)
    mask[rng.choice(n_steps, size=int(round(rate * n_steps)), replace=False)] = True
    return mask


def imputation_windows(n_steps, window=IMPUTATION_WINDOW):
    """
    Imputed spans and the fit window of each

    Spans of window // 2 steps tile the series (a short remainder joins the
    last span). Each span is imputed from the `window` steps centred on it,
    shifted to stay inside the series.

    Returns:
        list of (span, fit window) range pairs
    """
    if window < 2:
        raise EvaluationError(f"imputation window must hold at least 2 steps, got {window}")
    span = window // 2
    edges = list(range(0, n_steps, span)) + [n_steps]
    if len(edges) > 2 and edges[-1] - edges[-2] < span // 2:
        edges.pop(-2)
    pairs = []
    for a, b in zip(edges[:-1], edges[1:]):
        start = min(max((a + b) // 2 - window // 2, 0), max(n_steps - window, 0))
        pairs.append((range(a, b), range(start, min(start + window, n_steps))))
    return pairs


def linear_interpolation(series, mask):
    """Baseline: hidden and invalid cells filled by linear interpolation in time"""
    hidden = mask | ~series.valid
    s = pd.Series(np.where(hidden, np.nan, series.values), index=series.times)
    return s.interpolate(method='index', limit_direction='both').to_numpy()


def evaluate_imputation(series_list, rates=IMPUTATION_RATES, lam=1.0, seed=42, window=IMPUTATION_WINDOW,
                        spec=None, baseline=True):
    """
    Imputation benchmark with theta_0-only fits per window

    Args:
        series_list: channels sharing one regular time axis
        rates: fractions of time steps hidden (all channels at once)
        lam: ridge strength
        seed: mask generator seed

    Returns:
        DataFrame with columns rate, method, mse, mae (standardised units), plus a 'mean' rate row per method
    """
    if not series_list:
        raise EvaluationError("no series to impute")
    spec = spec or build_frequency_set()
    n = len(series_list[0])
    rng = np.random.default_rng(seed)
    rows = []
    for rate in rates:
        if rate >= 1.0:
            raise EvaluationError(f"mask rate must be below 100%, got {rate * 100:g}%")
        if rate <= 0:
            logger.warning("mask rate 0 hides no cells; skipping")
            continue
        mask = draw_mask_columns(n, rate, rng)
        errors = {'dam_theta0': ([], []), 'linear': ([], [])}
        for series in series_list:
            scaler = channel_scaler(series)
            target = mask & series.valid
            imputed = np.full(n, np.nan)
            for span, fit in imputation_windows(n, window):
                idx = np.arange(span.start, span.stop)
                hidden = idx[target[idx]]
                if hidden.size == 0:
                    continue
                fn = imputation_fit(series, mask, fit, lam=lam, spec=spec)
                imputed[hidden] = evaluate(fn, series.times[hidden])
            methods = {'dam_theta0': imputed}
            if baseline:
                methods['linear'] = linear_interpolation(series, mask)
            truth = _scale(scaler, series.values[target])
            for name, values in methods.items():
                e = _scale(scaler, values[target]) - truth
                errors[name][0].append(np.mean(e ** 2))
                errors[name][1].append(np.mean(np.abs(e)))
        for name, (sq, ab) in errors.items():
            if sq:
                rows.append({'rate': rate, 'method': name, 'mse': float(np.mean(sq)), 'mae': float(np.mean(ab))})
        logger.info(f"imputation at {rate * 100:g}%: " + ', '.join(
            f"{r['method']} MSE {r['mse']:.5f}" for r in rows if r['rate'] == rate))
    frame = pd.DataFrame(rows, columns=['rate', 'method', 'mse', 'mae'])
    if not frame.empty:
        means = frame.groupby('method', sort=False)[['mse', 'mae']].mean().reset_index()
        means.insert(0, 'rate', 'mean')
        frame = pd.concat([frame, means], ignore_index=True)
    return frame


def cost_sweep(model, dataset, context_sizes, protocol, repeats=20, seed=42):
    """
    Inference cost and accuracy per context size

    Wall time is the median over repeats of one forward + forecast on a fixed
    minibatch of windows; MSE comes from evaluate_forecast at that size.

    Returns:
        DataFrame with columns context_size, tome_target, seconds, mse
    """
    from dam.ml.network import build_context_batch

    split_range = dataset.split.get(protocol.split)
    series = dataset.history_until(protocol.split)[0]
    query = np.arange(protocol.max_horizon) * series.resolution
    rows = []
    for c in sorted(context_sizes):
        cell = dataclasses.replace(protocol, context_size=c, tome_target=None)
        anchors = window_anchors(series, split_range, c, protocol.max_horizon)[:protocol.minibatch]
        if anchors.size == 0:
            raise EvaluationError(f"context size {c} does not fit the {protocol.split} split")
        rng = np.random.default_rng(seed)
        contexts = [sample_context(series, context_config(cell.sigma, c), rng, now_index=int(a)) for a in anchors]
        queries = np.tile(query, (len(contexts), 1))
        timings = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            with ag.no_grad():
                output = model.forward(build_context_batch(contexts, model.spec, cell.init_lambda))
                model.forecast(output, queries)
            timings.append(time.perf_counter() - t0)
        mse = evaluate_forecast(ModelForecaster(model, lam=cell.init_lambda), dataset, cell).value(
            protocol.max_horizon, 'mse')
        rows.append({'context_size': c, 'tome_target': model.config.resolve_tome(c),
                     'seconds': float(np.median(timings)), 'mse': mse})
        logger.info(f"sweep: context {c}: {rows[-1]['seconds'] * 1e3:.1f} ms, MSE {mse:.5f}")
    return pd.DataFrame(rows, columns=['context_size', 'tome_target', 'seconds', 'mse'])


def resolve_ablation(names):
    """Map user-facing component names (dashes or underscores) onto model skip flags"""
    resolved = []
    for name in names:
        key = ABLATION_NAMES.get(name, name)
        if key not in SKIPPABLE:
            raise EvaluationError(f"unknown component '{name}'; choose from {', '.join(sorted(ABLATION_NAMES))}")
        resolved.append(key)
    return resolved


def ablate(model, dataset, components, protocol, lam=1.0):
    """
    Evaluate with each component skipped in turn and report the change against the full model

    Returns:
        DataFrame with columns component, horizon, mse, mae, delta_mse, delta_mae, token_counts
    """
    skips = resolve_ablation(components)
    baseline = ModelForecaster(model, tome_target=protocol.tome_target, lam=lam)
    base_report = evaluate_forecast(baseline, dataset, protocol)
    runs = [('none', base_report, baseline.token_counts)]
    for skip in skips:
        forecaster = ModelForecaster(model, tome_target=protocol.tome_target, skip=(skip,), lam=lam)
        runs.append((skip, evaluate_forecast(forecaster, dataset, protocol), forecaster.token_counts))
    rows = []
    for name, report, counts in runs:
        for h in protocol.horizons:
            mse, mae = report.value(h, 'mse'), report.value(h, 'mae')
            rows.append({'component': name, 'horizon': h, 'mse': mse, 'mae': mae,
                         'delta_mse': mse - base_report.value(h, 'mse'),
                         'delta_mae': mae - base_report.value(h, 'mae'),
                         'token_counts': ' '.join(str(c) for c in counts or [])})
    return pd.DataFrame(rows)


@dataclass
class EnsembleForecast:
    mean: np.ndarray
    p10: np.ndarray
    p90: np.ndarray
    samples: np.ndarray


def ensemble_forecast(model, series, now_index, query_times, n_draws, sigma, context_size,
                      rng, lam=1.0, tome_target=None):
    """
    Repeat independent HSR context draws for one 'now' and summarise the spread of the forecasts

    Returns:
        EnsembleForecast with per-query mean and 10th/90th percentiles
    """
    if n_draws < 1:
        raise SamplingError("need at least one draw")
    cfg = context_config(sigma, context_size)
    contexts = [sample_context(series, cfg, rng, now_index=now_index) for _ in range(n_draws)]
    query = np.asarray(query_times, dtype=np.float64)
    samples = ModelForecaster(model, tome_target=tome_target, lam=lam)(contexts, np.tile(query, (n_draws, 1)))
    p10, p90 = np.percentile(samples, [10, 90], axis=0)
    return EnsembleForecast(mean=samples.mean(axis=0), p10=p10, p90=p90, samples=samples)
