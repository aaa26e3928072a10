"""
The forecasting backbone: embedders, stacked layers and collapse heads.

A forward pass turns a context of (time, value) pairs into basis
coefficients and an affine adjustment; the forecast itself is a closed-form
function of time (see dam.ml.basis.evaluate).
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from dam.config import ModelConfig
from dam.errors import ModelError, ShapeError
from dam.ml import autograd as ag
from dam.ml.autograd import Tensor
from dam.ml.basis import build_frequency_set, init_theta, robust_quantiles, robust_standardize
from dam.ml.layers import FeedForward, LayerNorm, Linear, Module, MultiheadAttention
from dam.ml.tome import layer_reduction, tome_merge
from dam.models import AffineParams, CoefficientVector, ForecastFunction, HsrDraw
from dam.models.basis import SCALE_FLOOR

logger = logging.getLogger(__name__)

N_PERCENTILES = 50
COEFF_DAMPING = 0.1
SKIPPABLE = frozenset({'self_attn', 'cross_attn', 'ff_tv', 'ff_affine', 'ff_b', 'ff_b_cross', 'tome'})


@dataclass
class ContextBatch:
    """Standardised contexts sorted by time, with their theta_0 and normalisation"""
    times: np.ndarray
    values: np.ndarray
    theta0: np.ndarray
    norms: list

    def __len__(self):
        return self.times.shape[0]

    @property
    def context_size(self):
        return self.times.shape[1]


def build_context_batch(contexts, spec, lam=1.0):
    """
    Standardise every context and fit its theta_0

    Args:
        contexts: HsrDraw-like objects (times, values), all with the same number of points
        spec: BasisSpec
        lam: ridge strength of the theta_0 fit

    Returns:
        ContextBatch
    """
    if not contexts:
        raise ModelError("empty context batch")
    sizes = {len(c.times) for c in contexts}
    if len(sizes) != 1:
        raise ShapeError('context_batch', *[(s,) for s in sorted(sizes)])
    times, values, thetas, norms = [], [], [], []
    for c in contexts:
        t = np.asarray(c.times, dtype=np.float64)
        v = np.asarray(c.values, dtype=np.float64)
        if t.shape != v.shape:
            raise ShapeError('context_batch', t.shape, v.shape)
        order = np.argsort(t, kind='stable')
        standardized, norm = robust_standardize(v[order])
        times.append(t[order])
        values.append(standardized)
        thetas.append(init_theta(t[order], standardized, spec, lam).theta)
        norms.append(norm)
    return ContextBatch(np.stack(times), np.stack(values), np.stack(thetas), norms)


@dataclass
class TokenBatch:
    tv_tokens: Tensor
    b_tokens: Tensor
    affine_token: Tensor


@dataclass
class LayerRecord:
    self_attention: Optional[np.ndarray]
    cross_attention: Optional[np.ndarray]
    provenance: list
    n_tv_in: int
    n_tv_out: int


@dataclass
class ModelOutput:
    theta: Tensor
    affine: Tensor
    norms: list
    token_counts: List[int] = field(default_factory=list)
    layers: Optional[List[LayerRecord]] = None


class DamLayer(Module):
    def __init__(self, config, n_freq, rng):
        d, p = config.d_model, config.dropout
        self.mhsa_tv = MultiheadAttention(d, config.n_heads, rng, p)
        self.cross_attention = MultiheadAttention(d, config.n_heads, rng, p)
        self.ff_tv = FeedForward(d, config.d_ff, rng, p)
        self.ff_affine = FeedForward(d, config.d_ff, rng, p)
        self.ff_b = FeedForward(d, config.d_ff, rng, p)
        self.ff_b_cross = FeedForward(n_freq, 2 * n_freq, rng, p)
        self.norms = [LayerNorm(d) for _ in range(7)]

    def __call__(self, tokens, r, skip, rng=None, training=False, provenance=None):
        tv, b, affine = tokens.tv_tokens, tokens.b_tokens, tokens.affine_token
        n_in = tv.shape[1]
        self_weights = cross_weights = None

        attn_tv = attn_affine = None
        if 'self_attn' not in skip:
            joined = ag.concat([affine, tv], axis=1)
            attn, self_weights = self.mhsa_tv(joined, joined, joined, rng, training)
            attn_affine, attn_tv = attn[:, :1], attn[:, 1:]

        metric = attn_tv.data if attn_tv is not None else tv.data
        tv, plan = tome_merge(tv, metric, r)
        if provenance is not None:
            provenance = plan.merge_provenance(provenance)

        if attn_tv is not None:
            tv = self.norms[0](tv + plan.apply(attn_tv))
        if 'ff_tv' not in skip:
            tv = self.norms[1](self.ff_tv(tv, rng, training) + tv)
        if attn_affine is not None:
            affine = self.norms[2](affine + attn_affine)
        if 'ff_affine' not in skip:
            affine = self.norms[3](self.ff_affine(affine, rng, training) + affine)

        if 'cross_attn' not in skip:
            kv = ag.concat([affine, tv], axis=1)
            cross, cross_weights = self.cross_attention(b, kv, kv, rng, training)
            b = self.norms[4](b + cross)
        if 'ff_b' not in skip:
            b = self.norms[5](self.ff_b(b, rng, training) + b)
        if 'ff_b_cross' not in skip:
            across = self.ff_b_cross(b.swapaxes(1, 2), rng, training).swapaxes(1, 2)
            b = self.norms[6](across + b)

        record = LayerRecord(self_weights, cross_weights, provenance, n_in, tv.shape[1])
        return TokenBatch(tv, b, affine), record


class DamModel(Module):
    """
    Backbone with its embedders and collapse heads

    Args:
        config: ModelConfig
        spec: BasisSpec (the fixed frequency set by default)
        seed: parameter initialisation seed
    """

    def __init__(self, config=None, spec=None, seed=0):
        self.config = config or ModelConfig()
        self.spec = spec or build_frequency_set()
        rng = np.random.default_rng(seed)
        d, n_freq = self.config.d_model, len(self.spec)
        self.temporal_embedding = Linear(n_freq, d, rng)
        self.value_embedding = Linear(1, d, rng)
        self.btoken_period_embedder = Linear(2, d, rng)
        self.btoken_coeffs_embedder = Linear(2, d, rng)
        self.affine_embedding = Linear(N_PERCENTILES, d, rng)
        self.layers = [DamLayer(self.config, n_freq, rng) for _ in range(self.config.n_layers)]
        self.basis_collapsor = Linear(d, 2, rng)
        self.affine_collapser = Linear(d, 2, rng)
        # (offset, scale) start at (0, 1)
        self.affine_collapser.bias.data = np.array([0.0, 1.0], dtype=self.affine_collapser.bias.data.dtype)
        logger.debug(f"Built model with {self.num_parameters()} parameters")

    def context_batch(self, contexts, lam=1.0):
        return build_context_batch(contexts, self.spec, lam)

    def embed(self, batch):
        """Embed a ContextBatch into TV-tokens, B-tokens and the affine token"""
        m, c = batch.times.shape
        n_freq = len(self.spec)
        if batch.theta0.shape != (m, n_freq, 2):
            raise ShapeError('embed', batch.times.shape, batch.theta0.shape)
        freqs = self.spec.frequencies
        temporal = self.temporal_embedding(np.sin(2 * np.pi * batch.times[..., None] * freqs))
        tv = self.value_embedding(batch.values[..., None]) + temporal

        periods = np.stack((np.sin(2 * np.pi / freqs), np.cos(2 * np.pi / freqs)), axis=-1)
        damped = np.arcsinh(COEFF_DAMPING * batch.theta0) / COEFF_DAMPING
        b = self.btoken_coeffs_embedder(damped) + self.btoken_period_embedder(periods)

        qs = np.linspace(0.0, 1.0, N_PERCENTILES + 2)[1:-1]
        quantiles = robust_quantiles(batch.values, qs).T
        affine = self.affine_embedding(quantiles[:, None, :])
        return TokenBatch(tv, b, affine)

    def forward(self, batch, skip=(), training=False, rng=None, record=False, tome_target=None):
        """
        Run the backbone on a ContextBatch

        Args:
            skip: names from SKIPPABLE; a skipped block is bypassed together with its residual and norm
            training: enables dropout (needs rng)
            record: keep attention weights and merge provenance per layer
            tome_target: TV-token count after the last layer (ratio rule when None)

        Returns:
            ModelOutput
        """
        skip = frozenset(skip)
        unknown = skip - SKIPPABLE
        if unknown:
            raise ModelError(f"unknown blocks to skip: {', '.join(sorted(unknown))}")
        if training and self.config.dropout > 0 and rng is None:
            raise ModelError("training mode needs a random generator for dropout")

        tokens = self.embed(batch)
        m, n_start = len(batch), batch.context_size
        target = self.config.resolve_tome(n_start, tome_target)
        provenance = [[[i] for i in range(n_start)] for _ in range(m)] if record else None
        counts, records = [], []
        for li, layer in enumerate(self.layers):
            n_now = tokens.tv_tokens.shape[1]
            r = 0 if 'tome' in skip else layer_reduction(li, len(self.layers), n_start, n_now, target)
            tokens, layer_record = layer(tokens, r, skip, rng, training, provenance)
            for t in (tokens.tv_tokens, tokens.b_tokens, tokens.affine_token):
                ag.check_finite(t, layer=li)
            counts.append(tokens.tv_tokens.shape[1])
            if record:
                records.append(layer_record)
                provenance = layer_record.provenance

        theta = self.basis_collapsor(tokens.b_tokens)
        affine = self.affine_collapser(tokens.affine_token).reshape(m, 2)
        ag.check_finite(theta, what='coefficients')
        return ModelOutput(theta=theta, affine=affine, norms=batch.norms,
                           token_counts=counts, layers=records if record else None)

    __call__ = forward

    def forecast_standardized(self, output, query_times):
        """Differentiable forecast in standardised units, query_times [M, Q] in days"""
        t = np.asarray(query_times, dtype=np.float64)
        m = output.theta.shape[0]
        if t.ndim != 2 or t.shape[0] != m:
            raise ShapeError('forecast', t.shape, output.theta.shape)
        phase = 2 * np.pi * t[..., None] * self.spec.frequencies
        raw = Tensor(np.cos(phase)) @ output.theta[:, :, 0:1] + Tensor(np.sin(phase)) @ output.theta[:, :, 1:2]
        offset = output.affine[:, 0:1]
        scale = ag.safe_divisor(output.affine[:, 1:2], SCALE_FLOOR)
        return (raw.reshape(m, t.shape[1]) - offset) / scale

    def forecast(self, output, query_times):
        """Forecast in the original units of every context, shape [M, Q]"""
        with ag.no_grad():
            standardized = self.forecast_standardized(output, query_times).data.astype(np.float64)
        med = np.array([n.med for n in output.norms])[:, None]
        iqr = np.array([n.iqr for n in output.norms])[:, None]
        return iqr * standardized + med

    def forecast_functions(self, output):
        """One closed-form ForecastFunction per batch row"""
        theta = output.theta.data.astype(np.float64)
        affine = output.affine.data.astype(np.float64)
        return [ForecastFunction(spec=self.spec, theta=CoefficientVector(theta[i]), norm=output.norms[i],
                                 affine=AffineParams(a=float(affine[i, 1]), b=float(affine[i, 0])))
                for i in range(theta.shape[0])]

    def predict(self, times, values, query_times, lam=1.0, tome_target=None, skip=()):
        """
        Inference shortcut on raw context pairs

        Args:
            times, values: [M, C] (or [C] for a single context), times in days with 0 = now
            query_times: [M, Q] (or [Q]) days, past or future

        Returns:
            forecasts in original units, shaped like query_times
        """
        times, values = np.atleast_2d(times), np.atleast_2d(values)
        query = np.asarray(query_times, dtype=np.float64)
        single = query.ndim == 1
        contexts = [HsrDraw(np.arange(t.size), t, v) for t, v in zip(times, values)]
        with ag.no_grad():
            output = self.forward(self.context_batch(contexts, lam), skip=skip, tome_target=tome_target)
        result = self.forecast(output, np.broadcast_to(np.atleast_2d(query), (len(contexts), query.shape[-1])))
        return result[0] if single and len(contexts) == 1 else result


def export_attention(model, batch, tome_target=None, skip=()):
    """
    Attention record of one forward pass

    Returns:
        list (one per layer) of dicts with the raw self/cross attention
        weights, the merge provenance of the layer's input TV-tokens and the
        cumulative attention every input TV-token received, scaled to max 1
        per head
    """
    with ag.no_grad():
        output = model.forward(batch, skip=skip, record=True, tome_target=tome_target)
    return summarize_attention(output, batch.context_size)


def summarize_attention(output, context_size):
    if output.layers is None:
        raise ModelError("attention recording was disabled for this forward pass")
    summary = []
    provenance = [[[i] for i in range(context_size)] for _ in output.norms]
    for li, rec in enumerate(output.layers):
        cumulative = None
        if rec.self_attention is not None:
            # key columns: affine token, TV-tokens, zero slot
            received = rec.self_attention[..., 1:1 + rec.n_tv_in].sum(axis=2)
            peak = received.max(axis=-1, keepdims=True)
            cumulative = received / np.where(peak > 0, peak, 1.0)
        summary.append({
            'layer': li,
            'self_attention': rec.self_attention,
            'cross_attention': rec.cross_attention,
            'cumulative': cumulative,
            'provenance': provenance,
            'n_tv_in': rec.n_tv_in,
            'n_tv_out': rec.n_tv_out,
        })
        provenance = rec.provenance
    return summary
