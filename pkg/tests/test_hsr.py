import unittest

import numpy as np

from dam.errors import SamplingError
from dam.ml.hsr import (context_config, hsr_normalizer, hsr_weight, regular_context, sample_context,
                        sample_sequential, sample_targets, sample_with_replacement, target_config,
                        weighted_sample)
from dam.models import HsrConfig, TimeValueSeries
from dam.utils.data_loader import synthetic_series


class HsrTestCase(unittest.TestCase):
    """History sampling regime"""

    def setUp(self):
        """Hourly series with a few invalid steps"""
        self.rng = np.random.default_rng(0)
        base = synthetic_series(200)
        valid = np.ones(200, dtype=bool)
        valid[[90, 95, 99]] = False
        self.series = TimeValueSeries('s', base.times, base.values, valid, base.resolution)

    def test_weight_shape(self):
        """Test the long-tail weight at its reference points"""
        self.assertEqual(hsr_weight(0, 10.0), 1.0)
        self.assertAlmostEqual(hsr_weight(10, 10.0), 0.5)
        self.assertAlmostEqual(hsr_weight(-10, 10.0), 0.5)
        np.testing.assert_allclose(hsr_weight(np.array([0, 20]), 10.0), [1.0, 0.2])
        self.assertAlmostEqual(hsr_normalizer([-1, 0, 1], 1.0), 2.0)
        with self.assertRaises(SamplingError):
            hsr_weight(1, 0.0)

    def test_sample_without_replacement(self):
        """Test that draws are unique, sorted and taken from the support"""
        support = np.arange(-100, 0)
        x = weighted_sample(support, hsr_weight(support, 20.0), 30, self.rng)
        self.assertEqual(len(x), 30)
        self.assertEqual(len(np.unique(x)), 30)
        self.assertTrue(np.all(np.diff(x) > 0))
        self.assertTrue(np.all(np.isin(x, support)))

    def test_sample_whole_support(self):
        """Test that asking for the whole support returns all of it"""
        support = np.array([-3, -7, -1])
        np.testing.assert_array_equal(weighted_sample(support, np.ones(3), 3, self.rng), [-7, -3, -1])
        with self.assertRaises(SamplingError):
            weighted_sample(support, np.ones(3), 4, self.rng)

    def test_recent_past_is_favoured(self):
        """Test that recent offsets are drawn far more often than distant ones"""
        support = np.arange(-50, 0)
        weights = hsr_weight(support, 5.0)
        picks = np.concatenate([weighted_sample(support, weights, 1, self.rng) for _ in range(2000)])
        self.assertGreater(np.sum(picks == -1), 100)
        self.assertLess(np.sum(picks == -50), 20)

    def test_sequential_sampler_agrees(self):
        """Test that the reference sampler also draws distinct past offsets"""
        support = np.arange(-40, 0)
        x = sample_sequential(support, 10.0, 15, self.rng)
        self.assertEqual(len(np.unique(x)), 15)
        self.assertTrue(np.all(x < 0))

    def test_context_is_strictly_past_and_valid(self):
        """Test that context points come from valid steps before now"""
        now = 100
        draw = sample_context(self.series, context_config(30.0, 60), self.rng, now_index=now)
        self.assertEqual(len(draw), 60)
        self.assertTrue(np.all(draw.indices < 0))
        self.assertTrue(np.all(self.series.valid[now + draw.indices]))
        np.testing.assert_allclose(draw.times, draw.indices * self.series.resolution)
        np.testing.assert_array_equal(draw.values, self.series.values[now + draw.indices])

    def test_past_limit(self):
        """Test that the past extent bounds the support"""
        draw = sample_context(self.series, context_config(30.0, 10, past=20), self.rng, now_index=150)
        self.assertTrue(np.all(draw.indices >= -20))

    def test_short_support(self):
        """Test that too few valid points raise SamplingError"""
        with self.assertRaises(SamplingError):
            sample_context(self.series, context_config(30.0, 11), self.rng, now_index=10)

    def test_context_rejects_future(self):
        """Test that context draws may not reach into the future"""
        with self.assertRaises(SamplingError):
            sample_context(self.series, HsrConfig(sigma=10.0, n_points=5, future=3), self.rng, now_index=50)

    def test_targets_cover_both_sides(self):
        """Test that target draws include now and the future"""
        draw = sample_targets(self.series, target_config(1000.0, 150), self.rng, now_index=100)
        self.assertTrue(np.any(draw.indices > 0))
        self.assertTrue(np.any(draw.indices < 0))

    def test_rebased_series_needs_no_index(self):
        """Test that a rebased series locates now from time zero"""
        s = synthetic_series(50)
        rebased = TimeValueSeries('r', s.times - s.times[30], s.values, s.valid, s.resolution)
        draw = sample_context(rebased, context_config(5.0, 10), self.rng)
        self.assertTrue(np.all(draw.indices >= -30))
        with self.assertRaises(SamplingError):
            sample_context(s.slice(1, 50), context_config(5.0, 10), self.rng)

    def test_regular_context(self):
        """Test the fixed-window baseline takes the most recent valid steps"""
        draw = regular_context(self.series, 5, 100)
        np.testing.assert_array_equal(draw.indices, [-7, -6, -4, -3, -2])


def gaussian_weight(x, sigma):
    """Short-tail comparison weighting"""
    return np.exp(-0.5 * (np.asarray(x, dtype=np.float64) / sigma) ** 2)


class HsrDistributionTestCase(unittest.TestCase):
    """Statistical properties of HSR draws"""

    def setUp(self):
        self.rng = np.random.default_rng(7)

    def test_normalizer(self):
        """Test the normalisation constant against direct sums"""
        self.assertEqual(hsr_normalizer([0], 3.0), 1.0)
        support = np.arange(-720, 0)
        expected = sum(1.0 / (1.0 + (x / 720.0) ** 2) for x in range(-720, 0))
        self.assertAlmostEqual(hsr_normalizer(support, 720.0), expected, places=9)
        with self.assertRaises(SamplingError):
            hsr_normalizer([], 1.0)

    def test_with_replacement_matches_distribution(self):
        """Test that i.i.d. draws converge to the normalised weights"""
        support = np.arange(-100, 0)
        draws = sample_with_replacement(support, 10.0, 200_000, self.rng)
        empirical = np.array([np.mean(draws == x) for x in support])
        expected = hsr_weight(support, 10.0) / hsr_normalizer(support, 10.0)
        self.assertLess(np.max(np.abs(np.cumsum(empirical) - np.cumsum(expected))), 0.01)

    def test_wide_sigma_is_uniform(self):
        """Test that a huge sigma includes every offset equally often"""
        support = np.arange(-100, 0)
        weights = hsr_weight(support, 1e12)
        trials, n = 3000, 10
        counts = np.zeros(support.size)
        for _ in range(trials):
            counts[np.searchsorted(support, weighted_sample(support, weights, n, self.rng))] += 1
        p = n / support.size
        bound = 5 * np.sqrt(p * (1 - p) / trials)
        self.assertLess(np.max(np.abs(counts / trials - p)), bound)

    def test_reaches_further_than_short_tails(self):
        """Test that the long tail reaches further back than a Gaussian or a fixed window"""
        support = np.arange(-5000, 0)
        hsr, gauss = [], []
        for _ in range(50):
            hsr.append(np.abs(weighted_sample(support, hsr_weight(support, 720.0), 540, self.rng)).max())
            gauss.append(np.abs(weighted_sample(support, gaussian_weight(support, 720.0), 540, self.rng)).max())
        self.assertGreater(np.mean(hsr), np.mean(gauss))
        self.assertTrue(all(m >= 540 for m in hsr))

    def test_uniform_baseline_ignores_recency(self):
        """Test that the HSR draw sits closer to now than a uniform draw"""
        support = np.arange(-5000, 0)
        hsr = weighted_sample(support, hsr_weight(support, 100.0), 540, self.rng)
        uniform = weighted_sample(support, np.ones(support.size), 540, self.rng)
        self.assertLess(np.median(np.abs(hsr)), np.median(np.abs(uniform)))

    def test_draws_stay_unique_and_valid(self):
        """Test ten thousand context draws for repeats and hidden steps"""
        base = synthetic_series(500)
        valid = np.ones(500, dtype=bool)
        valid[self.rng.choice(400, size=60, replace=False)] = False
        series = TimeValueSeries('gappy', base.times, base.values, valid, base.resolution)
        cfg = context_config(50.0, 40)
        for _ in range(10_000):
            x = sample_context(series, cfg, self.rng, now_index=400).indices
            self.assertEqual(np.unique(x).size, 40)
            self.assertTrue(np.all(valid[400 + x]))
            self.assertTrue(np.all(x < 0))

    def test_reaches_past_the_fixed_window(self):
        """Test that an HSR context spans at least as far back as the fixed window of the same size"""
        base = synthetic_series(3000)
        valid = np.ones(3000, dtype=bool)
        valid[self.rng.choice(2500, size=250, replace=False)] = False
        series = TimeValueSeries('gappy', base.times, base.values, valid, base.resolution)
        window = np.abs(regular_context(series, 200, 2500).indices).max()
        cfg = context_config(720.0, 200)
        hits = [np.abs(sample_context(series, cfg, self.rng, now_index=2500).indices).max() >= window
                for _ in range(1000)]
        self.assertGreater(np.mean(hits), 0.99)

    def test_seed_determinism(self):
        """Test that the same seed gives the same draw"""
        series = synthetic_series(500)
        a = sample_targets(series, target_config(50.0, 40), np.random.default_rng(3), now_index=250)
        b = sample_targets(series, target_config(50.0, 40), np.random.default_rng(3), now_index=250)
        np.testing.assert_array_equal(a.indices, b.indices)


if __name__ == '__main__':
    unittest.main()
