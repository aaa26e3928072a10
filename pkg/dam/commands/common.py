import contextlib
import logging
import os

import click
import numpy as np

from dam import create_app
from dam.errors import ConfigError, DataError
from dam.models import DatasetSplit, TimeUnitConfig, TimeValueSeries
from dam.utils.data_loader import Dataset, load_manifest, synthetic_series
from dam.utils.reports import mark_incomplete, write_run_config

logger = logging.getLogger(__name__)


def run_options(f):
    """--config / --seed / --out, shared by every command"""
    f = click.option('--out', type=click.Path(file_okay=False), default=None,
                     help='Output directory (default: config "out", or DAM_OUT_DIR).')(f)
    f = click.option('--seed', type=int, default=None, help='Root random seed (default 42).')(f)
    f = click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), default=None,
                     help='JSON run configuration.')(f)
    return f


def dataset_options(f):
    f = click.option('--synthetic', type=int, default=None, metavar='N',
                     help='Use a synthetic hourly series of N steps instead of a manifest.')(f)
    f = click.option('--dataset', 'dataset_path', type=click.Path(exists=True, dir_okay=False), default=None,
                     help='Dataset manifest (JSON).')(f)
    return f


def checkpoint_option(required=True):
    return click.option('--checkpoint', type=click.Path(exists=True, file_okay=False), required=required,
                        help='Checkpoint directory.')


def make_app(config_path=None, seed=None, out=None, dataset_path=None, **overrides):
    merged = {'seed': seed, 'train.seed': seed, 'out': out, 'dataset': dataset_path}
    merged.update(overrides)
    return create_app(config_path, merged)


@contextlib.contextmanager
def output_dir(app, command):
    """Create the command's output directory and write config.json; mark it incomplete on failure"""
    path = os.path.join(app.out_dir, command)
    os.makedirs(path, exist_ok=True)
    write_run_config(path, app.config, app.seed_manifest, command)
    try:
        yield path
    except Exception as e:
        mark_incomplete(path, e)
        raise


def synthetic_dataset(n_steps, seed=0, noise_std=0.1):
    """Hourly two-sine + trend channel with a 70/10/20 split"""
    series = synthetic_series(n_steps, resolution=1.0 / 24, trend=0.001, noise_std=noise_std,
                              seed=seed, name='synthetic')
    return Dataset('synthetic', [series], DatasetSplit.from_fractions(n_steps), TimeUnitConfig(3600.0))


def load_datasets(app, synthetic=None):
    if synthetic:
        return [synthetic_dataset(synthetic, seed=app.config.seed)]
    if not app.config.dataset:
        raise ConfigError("a dataset manifest is required (--dataset or config 'dataset')")
    return [manifest.load() for manifest in load_manifest(app.config.dataset)]


def parse_floats(text, name):
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise ConfigError(f"--{name} expects comma-separated numbers, got '{text}'") from None


def parse_ints(text, name):
    values = parse_floats(text, name)
    if values is None:
        return None
    if any(v != int(v) for v in values):
        raise ConfigError(f"--{name} expects integers, got '{text}'")
    return [int(v) for v in values]


def select_channels(dataset, names):
    if not names:
        return list(dataset.series)
    wanted = set(names)
    chosen = [s for s in dataset.series if s.name in wanted]
    missing = wanted - {s.name for s in chosen}
    if missing:
        raise DataError(f"{dataset.name}: unknown channel(s) {', '.join(sorted(missing))}")
    return chosen


def extend_past_end(series):
    """Append one invalid step so that 'now' can sit right after the last observation"""
    times = np.append(series.times, series.times[-1] + series.resolution)
    return TimeValueSeries(series.name, times, np.append(series.values, 0.0),
                           np.append(series.valid, False), series.resolution)
