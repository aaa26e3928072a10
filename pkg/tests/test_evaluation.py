import unittest

import numpy as np

from dam.config import EvalProtocol, ModelConfig
from dam.errors import EvaluationError, SamplingError
from dam.ml.evaluation import (ModelForecaster, ThetaZeroForecaster, _Accumulator, ablate, cost_sweep,
                               draw_mask_columns, ensemble_forecast, evaluate_forecast, evaluate_imputation,
                               imputation_windows, linear_interpolation, resolve_ablation, tune_hsr, window_anchors)
from dam.ml.network import DamModel
from dam.models import DatasetSplit, TimeUnitConfig, TimeValueSeries
from dam.utils.data_loader import Dataset, synthetic_series

SMALL = ModelConfig(d_model=8, d_ff=8, n_layers=2, n_heads=2, n_tome=10, tome_context=20, dropout=0.0)


def ramp_dataset(n=400):
    """Daily series whose value is its own time, so 'now' can be read off any context"""
    series = [synthetic_series(n, resolution=1.0, components=(), trend=1.0, name='ramp')]
    return Dataset('ramp', series, DatasetSplit.from_fractions(n), TimeUnitConfig(86400.0))


class RampOracle:
    """Extrapolates the ramp exactly, optionally with an error past a step or per context size"""

    def __init__(self, error_from=None, error_per_point=0.0):
        self.error_from = error_from
        self.error_per_point = error_per_point

    def __call__(self, contexts, query_times):
        query_times = np.asarray(query_times)
        out = np.empty_like(query_times)
        for i, c in enumerate(contexts):
            now = c.values[0] - c.times[0]
            out[i] = now + query_times[i] + self.error_per_point * len(c)
            if self.error_from is not None:
                out[i, self.error_from:] += 1.0
        return out


class ForecastMetricsTestCase(unittest.TestCase):
    """Sliding-window forecasting metrics"""

    def setUp(self):
        self.dataset = ramp_dataset()
        self.protocol = EvalProtocol(horizons=(4, 8), context_size=20, sigma=50.0, seeds=(0,), minibatch=16)

    def test_exact_forecaster(self):
        """Test that an exact forecaster scores zero at every horizon"""
        report = evaluate_forecast(RampOracle(), self.dataset, self.protocol)
        for h in (4, 8):
            for metric in ('mse', 'mae', 'nmse', 'nmae'):
                self.assertEqual(report.value(h, metric), 0.0, msg=f"{metric}@{h}")

    def test_horizons_are_prefixes(self):
        """Test that shorter horizons only see the first steps of the window"""
        report = evaluate_forecast(RampOracle(error_from=4), self.dataset, self.protocol)
        self.assertEqual(report.value(4, 'mse'), 0.0)
        self.assertGreater(report.value(8, 'mse'), 0.0)

    def test_unnormalised_metrics(self):
        """Test that disabling normalisation makes NMSE equal MSE"""
        report = evaluate_forecast(RampOracle(error_from=2), self.dataset, self.protocol, normalize=False)
        self.assertAlmostEqual(report.value(8, 'nmse'), report.value(8, 'mse'))
        self.assertEqual(set(report.frame.columns), {'dataset', 'horizon', 'metric', 'value'})
        self.assertEqual(report.wide().shape, (2, 4))

    def test_unit_normalisers(self):
        """Test that NMSE equals MSE when the targets have unit mean square"""
        rng = np.random.default_rng(4)
        truth = rng.choice([-1.0, 1.0], size=(6, 8))
        pred = truth + rng.normal(scale=0.3, size=truth.shape)
        acc = _Accumulator((4, 8))
        acc.add(pred, truth, np.ones_like(truth, dtype=bool))
        for h in (4, 8):
            m = acc.metrics(h)
            self.assertAlmostEqual(m['nmse'], m['mse'], places=12)
            self.assertAlmostEqual(m['nmae'], m['mae'], places=12)

    def test_split_too_short(self):
        """Test that a split shorter than the horizon raises EvaluationError"""
        protocol = EvalProtocol(horizons=(100,), context_size=20, sigma=50.0, seeds=(0,), split='valid')
        with self.assertRaises(EvaluationError):
            evaluate_forecast(RampOracle(), self.dataset, protocol)
        report = evaluate_forecast(RampOracle(), self.dataset, self.protocol)
        with self.assertRaises(EvaluationError):
            report.value(96, 'mse')

    def test_theta_zero_baseline(self):
        """Test the ridge-only baseline on a periodic series"""
        series = synthetic_series(3000)
        dataset = Dataset('periodic', [series], DatasetSplit.from_fractions(3000), TimeUnitConfig(3600.0))
        protocol = EvalProtocol(horizons=(24,), context_size=1000, sigma=2000.0, seeds=(0,), max_windows=3)
        report = evaluate_forecast(ThetaZeroForecaster(), dataset, protocol)
        self.assertLess(report.value(24, 'mse'), 0.1)


class WindowAnchorTestCase(unittest.TestCase):
    """Window placement inside a split"""

    def test_full_horizon_and_history(self):
        """Test that anchors keep a full horizon ahead and enough history behind"""
        s = synthetic_series(100, resolution=1.0, components=())
        anchors = window_anchors(s, range(50, 100), context_size=30, horizon=10)
        np.testing.assert_array_equal(anchors, np.arange(50, 91))
        thinned = window_anchors(s, range(50, 100), context_size=30, horizon=10, max_windows=5)
        self.assertEqual(len(thinned), 5)
        self.assertEqual((thinned[0], thinned[-1]), (50, 90))

    def test_invalid_history_is_not_counted(self):
        """Test that only valid past points count towards the context"""
        valid = np.ones(100, dtype=bool)
        valid[:40] = False
        s = TimeValueSeries('gappy', np.arange(100.0), np.zeros(100), valid, 1.0)
        anchors = window_anchors(s, range(50, 100), context_size=30, horizon=10)
        np.testing.assert_array_equal(anchors, np.arange(70, 91))


class TuneTestCase(unittest.TestCase):
    """HSR grid search"""

    def test_grid(self):
        """Test the heatmap layout and the best cell"""
        protocol = EvalProtocol(horizons=(8,), seeds=(0,))
        result = tune_hsr(RampOracle(error_per_point=0.01), ramp_dataset(), [40, 20], [50.0, 10.0], protocol)
        self.assertEqual(result.heatmap.shape, (2, 2))
        self.assertEqual(list(result.heatmap.index), [20, 40])
        self.assertEqual((result.context_size, result.sigma), (20, 10.0))
        self.assertLess(result.heatmap.loc[20, 10.0], result.heatmap.loc[40, 10.0])

    def test_never_worse_than_the_default_cell(self):
        """Test that the chosen cell is the heatmap minimum and beats the protocol's own setting"""
        protocol = EvalProtocol(horizons=(8,), context_size=40, sigma=50.0, seeds=(0,))
        forecaster = RampOracle(error_per_point=0.01)
        result = tune_hsr(forecaster, ramp_dataset(), [20, 40, 60], [10.0, 50.0], protocol)
        best = result.heatmap.loc[result.context_size, result.sigma]
        self.assertEqual(best, result.heatmap.values.min())
        default = evaluate_forecast(forecaster, ramp_dataset(), EvalProtocol(
            horizons=(8,), context_size=40, sigma=50.0, seeds=(0,), split='valid'))
        self.assertAlmostEqual(result.heatmap.loc[40, 50.0], default.value(8, 'mse'))
        self.assertLessEqual(best, default.value(8, 'mse'))

    def test_empty_grid(self):
        """Test that an empty grid raises EvaluationError"""
        with self.assertRaises(EvaluationError):
            tune_hsr(RampOracle(), ramp_dataset(), [], [10.0], EvalProtocol(seeds=(0,)))

    def test_absolute_tome_target_rejected(self):
        """Test that a fixed ToME target cannot be carried across context sizes"""
        forecaster = ModelForecaster(DamModel(SMALL, seed=0), tome_target=10)
        with self.assertRaises(EvaluationError):
            tune_hsr(forecaster, ramp_dataset(), [20, 40], [50.0], EvalProtocol(horizons=(4,), seeds=(0,)))


class ImputationTestCase(unittest.TestCase):
    """Imputation protocol and baseline"""

    def test_mask_columns(self):
        """Test the number of hidden steps and the rate bounds"""
        mask = draw_mask_columns(100, 0.25, np.random.default_rng(0))
        self.assertEqual(mask.sum(), 25)
        with self.assertRaises(EvaluationError):
            draw_mask_columns(100, 1.0, np.random.default_rng(0))

    def test_windows(self):
        """Test that spans tile the series and a short remainder joins the last span"""
        pairs = imputation_windows(3000, 1440)
        self.assertEqual([span for span, _ in pairs],
                         [range(0, 720), range(720, 1440), range(1440, 2160), range(2160, 3000)])
        self.assertEqual([fit for _, fit in pairs],
                         [range(0, 1440), range(360, 1800), range(1080, 2520), range(1560, 3000)])
        self.assertEqual(imputation_windows(500, 1440), [(range(0, 500), range(0, 500))])
        with self.assertRaises(EvaluationError):
            imputation_windows(100, 1)

    def test_windows_are_centred(self):
        """Test that steps away from the series ends sit in the middle of their fit window"""
        for span, fit in imputation_windows(5000, 1440):
            self.assertEqual(len(fit), 1440)
            self.assertTrue(fit.start <= span.start and span.stop <= fit.stop)
            if 0 < fit.start and fit.stop < 5000:
                self.assertEqual(span.start - fit.start, fit.stop - span.stop)
        # step 1440 gets at least a quarter window of context on either side
        span, fit = next(p for p in imputation_windows(3000, 1440) if 1440 in p[0])
        self.assertGreaterEqual(1440 - fit.start, 360)
        self.assertGreaterEqual(fit.stop - 1440, 360)

    def test_linear_interpolation(self):
        """Test that interior gaps are filled along the line"""
        s = TimeValueSeries('line', np.arange(6.0), 2.0 * np.arange(6.0), np.ones(6, dtype=bool), 1.0)
        mask = np.array([False, False, True, True, False, False])
        np.testing.assert_allclose(linear_interpolation(s, mask)[2:4], [4.0, 6.0])

    def test_theta_zero_imputation(self):
        """Test that the ridge fit recovers hidden steps better than linear interpolation at every rate"""
        channels = [synthetic_series(3000, name='a'),
                    synthetic_series(3000, components=((1.0, 2.0, 1.0),), name='b')]
        rates = (0.125, 0.25, 0.375, 0.5)
        frame = evaluate_imputation(channels, rates=rates, window=1440)
        self.assertEqual(list(frame.columns), ['rate', 'method', 'mse', 'mae'])
        for rate in rates:
            dam = frame[(frame.rate == rate) & (frame.method == 'dam_theta0')].mse.item()
            linear = frame[(frame.rate == rate) & (frame.method == 'linear')].mse.item()
            self.assertLess(dam, 1e-3, msg=f"rate {rate}")
            self.assertLess(dam, linear, msg=f"rate {rate}")
        self.assertEqual(set(frame[frame.rate == 'mean'].method), {'dam_theta0', 'linear'})

    def test_full_mask_rejected(self):
        """Test that hiding every step raises EvaluationError"""
        with self.assertRaises(EvaluationError):
            evaluate_imputation([synthetic_series(200)], rates=(1.0,))
        with self.assertRaises(EvaluationError):
            evaluate_imputation([], rates=(0.25,))


class ModelProtocolTestCase(unittest.TestCase):
    """Ablation, cost sweep and ensembles with a small model"""

    def setUp(self):
        self.model = DamModel(SMALL, seed=0)
        self.dataset = ramp_dataset()
        self.protocol = EvalProtocol(horizons=(4,), context_size=20, sigma=50.0, seeds=(0,), max_windows=4)

    def test_resolve_ablation(self):
        """Test that dashed and underscored names map onto skip flags"""
        self.assertEqual(resolve_ablation(['self-attn', 'ff_b', 'tome']), ['self_attn', 'ff_b', 'tome'])
        with self.assertRaises(EvaluationError):
            resolve_ablation(['decoder'])

    def test_ablate(self):
        """Test that the full model is the zero reference of the ablation table"""
        frame = ablate(self.model, self.dataset, ['tome', 'cross-attn'], self.protocol)
        self.assertEqual(list(frame.component), ['none', 'tome', 'cross_attn'])
        base = frame[frame.component == 'none'].iloc[0]
        self.assertEqual((base.delta_mse, base.delta_mae), (0.0, 0.0))
        self.assertEqual(base.token_counts, '15 10')
        self.assertEqual(frame[frame.component == 'tome'].token_counts.item(), '20 20')

    def test_cost_sweep(self):
        """Test one timing row per context size"""
        frame = cost_sweep(self.model, self.dataset, [40, 20], self.protocol, repeats=2)
        self.assertEqual(list(frame.context_size), [20, 40])
        self.assertEqual(list(frame.tome_target), [10, 20])
        self.assertTrue(np.all(frame.seconds > 0))

    def test_cost_grows_with_context_size(self):
        """Test that wall time does not drop as the context grows"""
        dataset = ramp_dataset(2000)
        protocol = EvalProtocol(horizons=(4,), sigma=500.0, seeds=(0,), minibatch=2, max_windows=2)
        sizes = [64, 128, 256, 512, 1024]
        frame = cost_sweep(self.model, dataset, sizes, protocol, repeats=5)
        seconds = frame.seconds.to_numpy()
        self.assertEqual(list(frame.context_size), sizes)
        self.assertGreater(seconds[-1], seconds[0])
        # medians of few repeats jitter; allow 20% between neighbours
        self.assertTrue(np.all(seconds[1:] >= 0.8 * seconds[:-1]), msg=str(seconds))

    def test_ensemble(self):
        """Test repeated context draws for one 'now'"""
        series = self.dataset.series[0]
        result = ensemble_forecast(self.model, series, 300, [0.0, 1.0, 2.0], n_draws=5, sigma=50.0,
                                   context_size=20, rng=np.random.default_rng(0))
        self.assertEqual(result.samples.shape, (5, 3))
        self.assertTrue(np.all(result.p10 <= result.p90))
        with self.assertRaises(SamplingError):
            ensemble_forecast(self.model, series, 300, [0.0], n_draws=0, sigma=50.0, context_size=20,
                              rng=np.random.default_rng(0))


if __name__ == '__main__':
    unittest.main()
