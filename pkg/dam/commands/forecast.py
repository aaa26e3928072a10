import logging
import os

import click
import numpy as np
import pandas as pd

from dam.commands.common import (checkpoint_option, dataset_options, extend_past_end, load_datasets, make_app,
                                 output_dir, parse_floats, run_options, select_channels)
from dam.errors import ConfigError
from dam.ml.evaluation import ensemble_forecast
from dam.utils.checkpoint import load_checkpoint

logger = logging.getLogger(__name__)


def query_offsets(at, horizon, resolution):
    """Query times in days relative to 'now': explicit --at values, else the next `horizon` steps"""
    if at:
        return np.asarray(at, dtype=np.float64)
    if not horizon or horizon < 1:
        raise ConfigError("give --at times or a positive --horizon")
    return np.arange(horizon) * resolution


@click.command('forecast')
@run_options
@dataset_options
@checkpoint_option(required=True)
@click.option('--channel', 'channels', multiple=True, help='Channel to forecast (repeatable; default all).')
@click.option('--at', default=None, help='Comma-separated query times in days relative to now, past or future.')
@click.option('--horizon', type=int, default=None, help='Forecast the next N steps when --at is not given.')
@click.option('--now', 'now_index', type=int, default=None,
              help='Row index used as now (default: one step past the last row).')
@click.option('--context-size', type=int, default=None, help='HSR context points.')
@click.option('--sigma', type=float, default=None, help='HSR width in steps.')
@click.option('--tome', type=int, default=None, help='Absolute ToME target (TV-tokens left).')
@click.option('--samples', type=int, default=1, show_default=True,
              help='Independent context draws; >1 adds p10/p90 columns.')
def cmd_forecast(config_path, seed, out, dataset_path, synthetic, checkpoint, channels, at, horizon, now_index,
                 context_size, sigma, tome, samples):
    """Forecast (or backcast) arbitrary query times from one HSR context per channel."""
    app = make_app(config_path, seed, out, dataset_path, **{
        'eval.context_size': context_size, 'eval.sigma': sigma, 'eval.tome_target': tome})
    protocol = app.config.eval
    at_days = parse_floats(at, 'at')
    with output_dir(app, 'forecast') as path:
        model, _ = load_checkpoint(checkpoint)
        rng = app.rng('forecast')
        frames = []
        for dataset in load_datasets(app, synthetic):
            for series in select_channels(dataset, channels):
                if now_index is None:
                    series = extend_past_end(series)
                    now = len(series) - 1
                else:
                    now = now_index
                query = query_offsets(at_days, horizon, series.resolution)
                result = ensemble_forecast(model, series, now, query, samples, protocol.sigma,
                                           protocol.context_size, rng, lam=protocol.init_lambda,
                                           tome_target=protocol.tome_target)
                frame = pd.DataFrame({'dataset': dataset.name, 'channel': series.name,
                                      'query_days': query, 'forecast': result.mean})
                if samples > 1:
                    frame['p10'], frame['p90'] = result.p10, result.p90
                frames.append(frame)
                logger.info(f"{dataset.name}/{series.name}: {query.size} value(s) from now={now}")
        forecast = pd.concat(frames, ignore_index=True)
        forecast.to_csv(os.path.join(path, 'forecast.csv'), index=False)
        click.echo(f"wrote {len(forecast)} forecast value(s) to {path}")
