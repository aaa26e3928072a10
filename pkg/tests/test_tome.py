import unittest

import numpy as np

from dam.errors import ModelError
from dam.ml.autograd import Tensor
from dam.ml.tome import base_reduction, bipartite_matching, identity_plan, layer_reduction, tome_merge, tome_schedule


def brute_force_merges(tokens, r):
    """Reference matching: every even token picks its most similar odd token, top r merge"""
    unit = tokens / np.linalg.norm(tokens, axis=-1, keepdims=True)
    a, b = unit[0::2], unit[1::2]
    scores = a @ b.T
    pairs = []
    for i in range(len(a)):
        j = int(np.argmax(scores[i]))
        pairs.append((-scores[i, j], i, j))
    pairs.sort()
    return {(2 * i, 2 * j + 1) for _, i, j in pairs[:r]}


class ScheduleTestCase(unittest.TestCase):
    """Per-layer merge counts"""

    def test_training_schedule(self):
        """Test 540 points reduced to 250 over four layers"""
        self.assertEqual(base_reduction(540, 250, 4), 73)
        self.assertEqual(tome_schedule(540, 250, 4), [467, 394, 321, 250])

    def test_last_layer_absorbs_rounding(self):
        """Test that the final count always equals the target when reachable"""
        for n, target, layers in [(720, 333, 4), (100, 37, 3), (541, 250, 4)]:
            self.assertEqual(tome_schedule(n, target, layers)[-1], target)

    def test_reduction_is_clipped(self):
        """Test that a layer never merges more than half its tokens"""
        self.assertEqual(layer_reduction(3, 4, 100, 40, 1), 20)
        self.assertEqual(tome_schedule(10, 1, 2), [5, 3])

    def test_no_merge_when_target_not_below(self):
        """Test that contexts at or below the target are left alone"""
        self.assertEqual(tome_schedule(200, 250, 4), [200, 200, 200, 200])
        self.assertEqual(layer_reduction(0, 4, 250, 250, 250), 0)


class MatchingTestCase(unittest.TestCase):
    """Bipartite soft matching"""

    def setUp(self):
        self.rng = np.random.default_rng(11)

    def test_against_brute_force(self):
        """Test merged pairs against an independent reference"""
        for trial in range(20):
            tokens = self.rng.normal(size=(1, 12, 5))
            r = int(self.rng.integers(1, 7))
            plan = bipartite_matching(tokens, r)
            expected = brute_force_merges(tokens[0], r)
            dest = plan.dest[0]
            merged = {(i, j) for i in range(0, 12, 2) for j in range(1, 12, 2)
                      if dest[i] == dest[j] and np.sum(dest == dest[i]) > 1}
            self.assertEqual(merged, expected, msg=f"trial {trial}")
            self.assertEqual(plan.n_out, 12 - r)

    def test_counts_and_order(self):
        """Test that slots cover every input and survivors keep their order"""
        tokens = self.rng.normal(size=(3, 9, 4))
        plan = bipartite_matching(tokens, 3)
        self.assertEqual(plan.counts.shape, (3, 6))
        np.testing.assert_array_equal(plan.counts.sum(axis=1), [9, 9, 9])
        for row in plan.dest:
            survivors = [row[i] for i in range(9) if i % 2 or np.sum(row == row[i]) == 1]
            self.assertEqual(survivors, sorted(survivors))
            self.assertEqual(sorted(set(row)), list(range(6)))

    def test_ties_go_to_lower_index(self):
        """Test that identical tokens merge the earliest even tokens into the first odd token"""
        tokens = np.tile(np.array([1.0, 0.0, 0.0]), (1, 6, 1))
        plan = bipartite_matching(tokens, 2)
        np.testing.assert_array_equal(plan.dest[0], [0, 0, 0, 1, 2, 3])
        np.testing.assert_array_equal(plan.counts[0], [3, 1, 1, 1])

    def test_r_clipped_to_half(self):
        """Test that r larger than the even set is clipped"""
        plan = bipartite_matching(self.rng.normal(size=(1, 5, 3)), 4)
        self.assertEqual(plan.r, 2)
        self.assertEqual(plan.n_out, 3)

    def test_invalid_r(self):
        """Test that impossible reductions raise ModelError"""
        with self.assertRaises(ModelError):
            bipartite_matching(self.rng.normal(size=(1, 4, 3)), 4)
        with self.assertRaises(ModelError):
            bipartite_matching(self.rng.normal(size=(1, 4, 3)), -1)

    def test_zero_r_is_identity(self):
        """Test that r = 0 keeps every token"""
        plan = bipartite_matching(self.rng.normal(size=(2, 4, 3)), 0)
        np.testing.assert_array_equal(plan.dest, identity_plan(2, 4).dest)
        x = Tensor(self.rng.normal(size=(2, 4, 3)))
        self.assertIs(plan.apply(x), x)

    def test_apply_and_provenance(self):
        """Test that merged tokens are averaged and their sources unioned"""
        tokens = np.tile(np.array([1.0, 0.0]), (1, 4, 1))
        plan = bipartite_matching(tokens, 1)
        x = Tensor(np.arange(8.0).reshape(1, 4, 2))
        merged = plan.apply(x).data
        np.testing.assert_allclose(merged[0, 0], [1.0, 2.0])
        np.testing.assert_allclose(merged[0, 1:], [[4.0, 5.0], [6.0, 7.0]])
        provenance = plan.merge_provenance([[[0], [1], [2], [3]]])
        self.assertEqual(provenance, [[[0, 1], [2], [3]]])

    def test_merge_tokens(self):
        """Test merging token values directly"""
        x = Tensor(self.rng.normal(size=(1, 10, 4)))
        same, plan = tome_merge(x, x.data, 0)
        self.assertIs(same, x)
        self.assertEqual(plan.r, 0)

        twins = Tensor(np.array([[[1.0, 2.0], [1.0, 2.0]]]))
        merged, _ = tome_merge(twins, twins.data, 1)
        np.testing.assert_allclose(merged.data, [[[1.0, 2.0]]])

        merged, plan = tome_merge(x, x.data, 3)
        self.assertEqual(merged.shape, (1, 7, 4))
        self.assertEqual(brute_force_merges(x.data[0], 3),
                         {(a, b) for a in range(0, 10, 2) for b in range(1, 10, 2) if plan.dest[0, a] == plan.dest[0, b]})
        for slot in range(7):
            sources = np.flatnonzero(plan.dest[0] == slot)
            np.testing.assert_allclose(merged.data[0, slot], x.data[0, sources].mean(axis=0), rtol=1e-5, atol=1e-6)


if __name__ == '__main__':
    unittest.main()
