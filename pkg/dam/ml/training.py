"""
Training: corpus sampling, decay-weighted Huber loss, warmup + cosine
schedule, percentile gradient clipping and Adam.
"""
import collections
import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd

from dam.config import finetune_config
from dam.errors import SamplingError, ShapeError, TrainingError
from dam.ml import autograd as ag
from dam.ml.autograd import Tensor
from dam.ml.hsr import context_config, sample_context, sample_targets, target_config
from dam.ml.network import build_context_batch
from dam.utils.data_loader import compute_utility, normalise_utilities

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ['step', 'loss', 'lr', 'grad_norm', 'clipped', 'val_mse']


def decay_weights(steps, halflife=360.0):
    """2^(-|x| / halflife): 1 at 'now', 0.5 one half-life away in either direction"""
    return np.power(2.0, -np.abs(np.asarray(steps, dtype=np.float64)) / halflife)


def weighted_huber_loss(pred, targets, steps, delta=1.0, halflife=360.0):
    """
    Mean over elements of decay_weight(x) * huber(pred - target)

    Args:
        pred: Tensor of predictions
        targets: array, same shape
        steps: time-step offsets of every target, same shape
    """
    targets = np.asarray(targets)
    if pred.shape != targets.shape or np.shape(steps) != targets.shape:
        raise ShapeError('loss', pred.shape, targets.shape, np.shape(steps))
    weighted = ag.huber(pred - Tensor(targets), delta) * Tensor(decay_weights(steps, halflife))
    return weighted.mean()


def lr_at(step, phases):
    """
    Learning rate at a global step for consecutive (warmup, cosine) phases

    Each phase ramps linearly from 0 to its peak over its warmup steps, then
    follows a half cosine down to its floor at the phase's last iteration.
    Steps past the end stay at the final floor.
    """
    if step < 0:
        raise TrainingError(f"negative step {step}")
    start = 0
    for phase in phases:
        local = step - start
        if local < phase.iterations:
            break
        start += phase.iterations
    else:
        phase, local = phases[-1], phases[-1].iterations
    if local < phase.warmup:
        return phase.peak * local / phase.warmup
    span = phase.iterations - phase.warmup
    progress = 1.0 if span == 0 else (local - phase.warmup) / span
    return phase.floor + 0.5 * (phase.peak - phase.floor) * (1.0 + math.cos(math.pi * progress))


@dataclass
class ClipState:
    """Ring buffer of recent global gradient norms"""
    window: int = 1000
    percentile: float = 90.0
    min_history: int = 100
    norms: collections.deque = None

    def __post_init__(self):
        if self.norms is None:
            self.norms = collections.deque(maxlen=self.window)

    @property
    def threshold(self):
        if len(self.norms) < self.min_history:
            return None
        return float(np.percentile(np.asarray(self.norms), self.percentile))


def global_grad_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    return math.sqrt(total)


def clip_gradients(params, state):
    """
    Scale gradients down to the running percentile of recent norms

    The threshold comes from the buffer before this step's norm is added;
    the pre-clip norm is recorded either way.

    Returns:
        (pre-clip norm, scale factor applied)
    """
    norm = global_grad_norm(params)
    threshold = state.threshold
    scale = 1.0
    if threshold is not None and norm > threshold > 0:
        scale = threshold / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    state.norms.append(norm)
    return norm, scale


class Adam:
    """Adam with bias correction; weight decay is decoupled and off by default"""

    def __init__(self, named_params, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = dict(named_params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self, lr):
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            if self.weight_decay:
                p.data = p.data - lr * self.weight_decay * p.data
            if p.grad is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(p.grad)
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype, copy=False)

    def state_dict(self):
        return {'step_count': self.step_count, 'm': dict(self.m), 'v': dict(self.v)}

    def load_state_dict(self, state):
        if set(state['m']) != set(self.params) or set(state['v']) != set(self.params):
            raise TrainingError("optimizer state does not match the model parameters")
        self.step_count = int(state['step_count'])
        self.m = {k: np.array(v, dtype=self.params[k].data.dtype) for k, v in state['m'].items()}
        self.v = {k: np.array(v, dtype=self.params[k].data.dtype) for k, v in state['v'].items()}


@dataclass
class TrainingCorpus:
    """Training channels with their sampling probabilities"""
    series: list
    groups: list
    probabilities: np.ndarray
    utilities: np.ndarray

    def __len__(self):
        return len(self.series)


def eligible_now_indices(series, context_points, target_points):
    """'now' anchors with enough valid past for a context and enough valid points for the targets"""
    valid = series.valid.astype(np.int64)
    past_valid = np.concatenate(([0], np.cumsum(valid)[:-1]))
    ok = past_valid >= context_points
    ok &= np.sum(valid) >= target_points
    return np.flatnonzero(ok)


def build_corpus(datasets, cfg, split='train'):
    """
    Collect the channels of one split of every dataset and weight them by utility

    Channels without a valid 'now' anchor are left out.
    """
    series, groups = [], []
    for dataset in datasets:
        for s in dataset.split_series(split):
            if eligible_now_indices(s, cfg.context_points, cfg.target_points).size == 0:
                logger.warning(f"Skipping {dataset.name}/{s.name}: not enough history for a context")
                continue
            series.append(s)
            groups.append(dataset.name)
    if not series:
        raise TrainingError("no series with sufficient history for the configured context")
    utilities = np.array([compute_utility(s) for s in series])
    probs = normalise_utilities(utilities, groups, cfg.utility_normalization)
    logger.info(f"Corpus: {len(series)} series from {len(set(groups))} dataset(s)")
    return TrainingCorpus(series, groups, probs, utilities)


@dataclass
class TrainingBatch:
    contexts: list
    targets: list
    batch: object
    names: list

    def target_arrays(self):
        """(target times, standardised target values, step offsets), each [M, T]"""
        times = np.stack([t.times for t in self.targets])
        steps = np.stack([t.indices for t in self.targets])
        values = np.stack([norm.apply(t.values) for t, norm in zip(self.targets, self.batch.norms)])
        return times, values, steps


def sample_training_batch(corpus, cfg, rng, spec, size=None):
    """
    Draw a minibatch: series by utility (with replacement), a uniform 'now'
    per series, then HSR context and targets; theta_0 is fit to each drawn context
    """
    size = size or cfg.minibatch
    ctx_cfg = context_config(cfg.sigma, cfg.context_points)
    tgt_cfg = target_config(cfg.sigma, cfg.target_points)
    picks = rng.choice(len(corpus), size=size, replace=True, p=corpus.probabilities)
    contexts, targets, names = [], [], []
    for i in picks:
        s = corpus.series[i]
        anchors = eligible_now_indices(s, cfg.context_points, cfg.target_points)
        if anchors.size == 0:
            raise SamplingError(f"series '{s.name}' has no valid 'now' anchor")
        now = int(rng.choice(anchors))
        contexts.append(sample_context(s, ctx_cfg, rng, now_index=now))
        targets.append(sample_targets(s, tgt_cfg, rng, now_index=now))
        names.append(f"{corpus.groups[i]}/{s.name}")
    return TrainingBatch(contexts, targets, build_context_batch(contexts, spec, cfg.init_lambda), names)


def batch_loss(model, tbatch, cfg, rng=None, training=True):
    output = model.forward(tbatch.batch, training=training, rng=rng)
    times, values, steps = tbatch.target_arrays()
    pred = model.forecast_standardized(output, times)
    return weighted_huber_loss(pred, values, steps, cfg.huber_delta, cfg.decay_halflife_steps)


def validate(model, corpus, cfg, seed=None):
    """MSE (standardised units) on HSR-drawn targets, fixed seed"""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    errors = []
    with ag.no_grad():
        for _ in range(cfg.val_batches):
            tbatch = sample_training_batch(corpus, cfg, rng, model.spec)
            output = model.forward(tbatch.batch)
            times, values, _ = tbatch.target_arrays()
            pred = model.forecast_standardized(output, times).data
            errors.append(np.mean((pred - values) ** 2))
    return float(np.mean(errors))


@dataclass
class TrainingResult:
    metrics: pd.DataFrame
    checkpoints: List[str] = field(default_factory=list)
    final_step: int = 0


def _write_metrics(rows, out_dir):
    frame = pd.DataFrame(rows, columns=METRIC_COLUMNS)
    if out_dir:
        frame.to_csv(os.path.join(out_dir, 'metrics.csv'), index=False)
    return frame


def train(model, corpus, cfg, out_dir=None, val_corpus=None, optimizer=None, start_step=0, max_steps=None):
    """
    Run the training loop

    Args:
        model: DamModel, updated in place
        corpus: TrainingCorpus
        cfg: TrainConfig
        out_dir: where metrics.csv and checkpoints go (nothing is written when None)
        val_corpus: TrainingCorpus for periodic validation
        optimizer: Adam to resume with
        start_step: first global step (resuming)
        max_steps: stop early after this many steps of this call

    Returns:
        TrainingResult
    """
    from dam.utils.checkpoint import save_checkpoint

    if len(corpus) == 0:
        raise TrainingError("empty training corpus")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    params = model.parameters()
    optimizer = optimizer or Adam(model.named_parameters(), cfg.betas, cfg.eps, cfg.weight_decay)
    clip = ClipState(cfg.clip_window, cfg.clip_percentile, cfg.clip_min_history)
    rng = np.random.default_rng(cfg.seed + start_step)
    end = cfg.iterations if max_steps is None else min(cfg.iterations, start_step + max_steps)
    rows, checkpoints = [], []
    last_norm = float('nan')
    logger.info(f"Training steps {start_step}..{end} with {model.num_parameters()} parameters")

    for step in range(start_step, end):
        lr = lr_at(step, cfg.phases)
        tbatch = sample_training_batch(corpus, cfg, rng, model.spec)
        model.zero_grad()
        loss = batch_loss(model, tbatch, cfg, rng)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at step {step} (lr {lr:.3g}, "
                                f"last grad norm {last_norm:.4g}, series {', '.join(tbatch.names[:4])})")
        loss.backward()
        last_norm, scale = clip_gradients(params, clip)
        optimizer.step(lr)

        val_mse = None
        if val_corpus is not None and cfg.val_interval and (step + 1) % cfg.val_interval == 0:
            val_mse = validate(model, val_corpus, cfg)
            logger.info(f"step {step + 1}: validation MSE {val_mse:.5f}")
        if (step + 1) % cfg.log_interval == 0 or val_mse is not None or step == start_step:
            rows.append([step + 1, value, lr, last_norm, scale < 1.0, val_mse])
            logger.info(f"step {step + 1}: loss {value:.5f} lr {lr:.3g} grad norm {last_norm:.4g}")
        if out_dir and cfg.checkpoint_interval and (step + 1) % cfg.checkpoint_interval == 0:
            path = os.path.join(out_dir, f"checkpoint-{step + 1}")
            save_checkpoint(model, path, step=step + 1, optimizer=optimizer)
            checkpoints.append(path)
            _write_metrics(rows, out_dir)

    final_step = end if end > start_step else start_step
    if out_dir:
        path = os.path.join(out_dir, 'checkpoint-final')
        save_checkpoint(model, path, step=final_step, optimizer=optimizer)
        checkpoints.append(path)
    return TrainingResult(_write_metrics(rows, out_dir), checkpoints, final_step)


def finetune(model, corpus, base_cfg, preset='default', out_dir=None, val_corpus=None, max_steps=None):
    """Short single-phase run from an already trained model with a preset learning rate"""
    cfg = finetune_config(base_cfg, preset)
    logger.info(f"Fine-tuning with preset '{preset}': lr {cfg.phases[0].peak}, {cfg.iterations} steps")
    return train(model, corpus, cfg, out_dir=out_dir, val_corpus=val_corpus, max_steps=max_steps)


def toy_config(base, iterations=500, warmup=50, peak=1e-3, **overrides):
    """Small single-phase TrainConfig for smoke runs and tests"""
    from dam.config import LrPhase
    phase = LrPhase(iterations=iterations, warmup=warmup, peak=peak, floor=0.0)
    return dataclasses.replace(base, phases=(phase,), **overrides)
