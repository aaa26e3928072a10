import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

from dam.errors import ConfigError

logger = logging.getLogger(__name__)

# Training-time ToME ratio: 540 context points reduced to 250 TV-tokens
TRAIN_CONTEXT = 540
TRAIN_TOME = 250


@dataclass(frozen=True)
class ModelConfig:
    """
    Backbone hyper-parameters.

    n_tome is the TV-token count left after all merging for a context of
    tome_context points; other context sizes keep the same ratio unless
    an absolute override is passed to resolve_tome.
    """
    d_model: int = 256
    d_ff: int = 256
    n_layers: int = 4
    n_heads: int = 4
    n_tome: int = TRAIN_TOME
    tome_context: int = TRAIN_CONTEXT
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        for name in ('d_model', 'd_ff', 'n_layers', 'n_heads', 'n_tome', 'tome_context'):
            if getattr(self, name) <= 0:
                raise ConfigError(f"model.{name} must be positive")
        if self.n_tome > self.tome_context:
            raise ConfigError("model.n_tome cannot exceed model.tome_context")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("model.dropout must lie in [0, 1)")

    @property
    def tome_ratio(self):
        return self.n_tome / self.tome_context

    def resolve_tome(self, context_size, override=None):
        """TV-token target for a context size (ratio rule, or an absolute override)"""
        if override is not None:
            target = int(override)
        elif context_size == self.tome_context:
            target = self.n_tome
        else:
            target = int(math.floor(context_size * self.tome_ratio + 0.5))
        return max(1, min(target, context_size))


@dataclass(frozen=True)
class LrPhase:
    iterations: int
    warmup: int
    peak: float
    floor: float

    def __post_init__(self):
        if self.iterations <= 0 or self.warmup < 0:
            raise ConfigError("lr phase needs positive iterations and non-negative warmup")
        if self.iterations < self.warmup:
            raise ConfigError("lr phase iterations must be >= warmup")


# Long run followed by a short warm restart
DEFAULT_PHASES = (
    LrPhase(iterations=1_000_000, warmup=10_000, peak=1e-3, floor=1e-14),
    LrPhase(iterations=50_000, warmup=2_000, peak=1e-3, floor=0.0),
)


@dataclass(frozen=True)
class TrainConfig:
    minibatch: int = 32
    context_points: int = 540
    target_points: int = 540
    sigma: float = 720.0
    decay_halflife_steps: float = 360.0
    phases: tuple = DEFAULT_PHASES
    seed: int = 42
    huber_delta: float = 1.0
    init_lambda: float = 1.0
    clip_percentile: float = 90.0
    clip_window: int = 1000
    clip_min_history: int = 100
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    utility_normalization: str = 'global'
    log_interval: int = 100
    val_interval: int = 1000
    val_batches: int = 4
    checkpoint_interval: int = 10_000

    def __post_init__(self):
        if not self.phases:
            raise ConfigError("train.phases must contain at least one phase")
        phases = tuple(p if isinstance(p, LrPhase) else LrPhase(**p) for p in self.phases)
        object.__setattr__(self, 'phases', phases)
        object.__setattr__(self, 'betas', tuple(self.betas))
        for name in ('minibatch', 'context_points', 'target_points', 'sigma',
                     'decay_halflife_steps', 'huber_delta', 'clip_window'):
            if getattr(self, name) <= 0:
                raise ConfigError(f"train.{name} must be positive")
        if self.utility_normalization not in ('global', 'dataset'):
            raise ConfigError("train.utility_normalization must be 'global' or 'dataset'")

    @property
    def iterations(self):
        return sum(p.iterations for p in self.phases)

    @property
    def warmup(self):
        return self.phases[0].warmup


@dataclass(frozen=True)
class EvalProtocol:
    horizons: tuple = (96, 192, 336, 720)
    context_size: int = 720
    sigma: float = 720.0
    tome_target: Optional[int] = None
    stride: int = 1
    seeds: tuple = (42, 43, 44)
    minibatch: int = 32
    max_windows: Optional[int] = None
    split: str = 'test'
    init_lambda: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'horizons', tuple(int(h) for h in self.horizons))
        object.__setattr__(self, 'seeds', tuple(int(s) for s in self.seeds))
        if not self.horizons or any(h <= 0 for h in self.horizons):
            raise ConfigError("eval.horizons must be positive")
        if self.stride < 1:
            raise ConfigError("eval.stride must be >= 1")
        if not self.seeds:
            raise ConfigError("eval.seeds must not be empty")
        if self.split not in ('train', 'valid', 'test'):
            raise ConfigError("eval.split must be train, valid or test")

    @property
    def max_horizon(self):
        return max(self.horizons)


@dataclass(frozen=True)
class FinetunePreset:
    lr: float
    iterations: int
    floor: float = 1e-14


FINETUNE_PRESETS = {
    'default': FinetunePreset(lr=1e-5, iterations=10_000),
    'illness': FinetunePreset(lr=1e-6, iterations=10_000),
    'weekdays': FinetunePreset(lr=1e-5, iterations=10_000),
    'ucipower': FinetunePreset(lr=1e-5, iterations=10_000),
    'azure': FinetunePreset(lr=1e-5, iterations=10_000),
    'mtemp': FinetunePreset(lr=1e-6, iterations=10_000),
    'mweb': FinetunePreset(lr=1e-5, iterations=10_000),
    'mweather': FinetunePreset(lr=1e-3, iterations=30_000),
    'mmeters': FinetunePreset(lr=1e-3, iterations=30_000),
}


def finetune_config(base, preset_name='default'):
    """TrainConfig for a short fine-tuning run (single phase, no warmup)"""
    try:
        preset = FINETUNE_PRESETS[preset_name]
    except KeyError:
        raise ConfigError(f"unknown fine-tune preset '{preset_name}'") from None
    phase = LrPhase(iterations=preset.iterations, warmup=0, peak=preset.lr, floor=preset.floor)
    return dataclasses.replace(base, phases=(phase,))


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalProtocol = field(default_factory=EvalProtocol)
    dataset: Optional[str] = None
    out: str = 'runs'
    seed: int = 42

    def to_dict(self):
        return dataclasses.asdict(self)

    def save(self, path, extra=None):
        data = self.to_dict()
        if extra:
            data.update(extra)
        with open(path, 'w') as fh:
            json.dump(data, fh, indent=2, sort_keys=True)


_SECTIONS = {'model': ModelConfig, 'train': TrainConfig, 'eval': EvalProtocol}


def _build(cls, data, section):
    if not isinstance(data, dict):
        raise ConfigError(f"'{section}' must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {', '.join(unknown)}")
    kwargs = dict(data)
    if cls is TrainConfig and 'phases' in kwargs:
        kwargs['phases'] = tuple(LrPhase(**p) for p in kwargs['phases'])
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"invalid '{section}' section: {e}") from None


def config_from_dict(data):
    """Build a RunConfig from nested dicts, rejecting unknown keys"""
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        if name in _SECTIONS:
            kwargs[name] = _build(_SECTIONS[name], value, name)
        else:
            kwargs[name] = value
    return RunConfig(**kwargs)


def load_config(path=None, overrides=None):
    """
    Load a RunConfig from a JSON file and apply dotted overrides

    Args:
        path: JSON file or None for defaults
        overrides: mapping such as {'eval.sigma': 100, 'seed': 7}; None values are ignored

    Returns:
        RunConfig
    """
    data = {}
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        parts = key.split('.')
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    config = config_from_dict(data)
    logger.debug(f"Resolved config: {config}")
    return config
