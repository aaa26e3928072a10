"""
Token merging (bipartite soft matching) for TV-tokens
"""
import logging
import math
from dataclasses import dataclass
from typing import List

import numpy as np
from sklearn.metrics.pairwise import cosine_similarity

from dam.errors import ModelError
from dam.ml import autograd as ag

logger = logging.getLogger(__name__)


@dataclass
class MergePlan:
    """
    Where every input token goes: dest[m, i] is the output slot of token i
    in batch row m, counts[m, k] how many inputs land in slot k.
    """
    dest: np.ndarray
    counts: np.ndarray
    r: int

    @property
    def n_out(self):
        return self.counts.shape[1]

    def apply(self, x):
        """Unweighted mean merge of a [M, N, D] Tensor"""
        if self.r == 0:
            return x
        return ag.mean_merge(x, self.dest, self.counts)

    def merge_provenance(self, provenance):
        """Union the original-index sets of merged tokens"""
        merged = []
        for row, sources in zip(self.dest, provenance):
            slots = [[] for _ in range(self.n_out)]
            for i, k in enumerate(row):
                slots[k].extend(sources[i])
            merged.append([sorted(s) for s in slots])
        return merged


def identity_plan(m, n):
    return MergePlan(dest=np.tile(np.arange(n), (m, 1)), counts=np.ones((m, n), dtype=np.int64), r=0)


def bipartite_matching(metric, r):
    """
    Plan merging r tokens per batch row

    Tokens at even positions form set A, odd positions set B. Every A token
    is matched to its most cosine-similar B token; the r A tokens with the
    highest match scores are averaged into their B token. Ties go to the
    lower index on both sides. Surviving tokens keep their relative order.

    Args:
        metric: array [M, N, D] the similarity is computed on
        r: tokens to remove; clipped to the size of A

    Returns:
        MergePlan
    """
    metric = np.asarray(metric, dtype=np.float64)
    m, n, _ = metric.shape
    if r < 0 or (r >= n and r > 0):
        raise ModelError(f"cannot merge {r} of {n} tokens")
    a_idx, b_idx = np.arange(0, n, 2), np.arange(1, n, 2)
    r = min(r, a_idx.size, b_idx.size)
    if r == 0:
        return identity_plan(m, n)

    dest = np.empty((m, n), dtype=np.int64)
    for row in range(m):
        scores = cosine_similarity(metric[row, a_idx], metric[row, b_idx])
        match = scores.argmax(axis=1)
        best = scores[np.arange(a_idx.size), match]
        merged_a = np.argsort(-best, kind='stable')[:r]
        removed = np.zeros(n, dtype=bool)
        removed[a_idx[merged_a]] = True
        slot = np.cumsum(~removed) - 1
        dest[row] = slot
        dest[row, a_idx[merged_a]] = slot[b_idx[match[merged_a]]]
    counts = np.stack([np.bincount(row, minlength=n - r) for row in dest])
    return MergePlan(dest=dest, counts=counts, r=r)


def tome_merge(tokens, metric, r):
    """Merge r tokens of a [M, N, D] Tensor, matched on metric; returns (merged, plan)"""
    plan = bipartite_matching(metric, r) if r > 0 else identity_plan(tokens.shape[0], tokens.shape[1])
    return plan.apply(tokens), plan


def base_reduction(n_tokens, n_target, n_layers):
    """Per-layer reduction before the final layer: (n - target) / layers, rounded half up"""
    return max(0, int(math.floor((n_tokens - n_target) / n_layers + 0.5)))


def layer_reduction(layer, n_layers, n_start, n_current, n_target):
    """
    Tokens to merge in one layer; the final layer absorbs the rounding so the
    count ends exactly at n_target (when merging is possible at all)
    """
    if n_start <= n_target:
        return 0
    if layer == n_layers - 1:
        r = n_current - n_target
    else:
        r = base_reduction(n_start, n_target, n_layers)
    return max(0, min(r, n_current // 2))


def tome_schedule(n_tokens, n_target, n_layers) -> List[int]:
    """Token counts after each layer"""
    counts, current = [], n_tokens
    for layer in range(n_layers):
        current -= layer_reduction(layer, n_layers, n_tokens, current, n_target)
        counts.append(current)
    return counts
