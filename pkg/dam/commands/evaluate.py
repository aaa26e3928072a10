import logging
import os

import click
import pandas as pd

from dam.commands.common import (checkpoint_option, dataset_options, load_datasets, make_app, output_dir,
                                 parse_floats, parse_ints, run_options)
from dam.errors import ConfigError
from dam.ml.evaluation import (ABLATION_NAMES, ModelForecaster, ThetaZeroForecaster, ablate, cost_sweep,
                               evaluate_forecast, tune_hsr)
from dam.utils import svg
from dam.utils.checkpoint import load_checkpoint
from dam.utils.reports import write_json

logger = logging.getLogger(__name__)


def protocol_options(f):
    """Evaluation protocol overrides shared by eval / tune / ablate / sweep"""
    f = click.option('--max-windows', type=int, default=None, help='Cap on evaluation windows per channel.')(f)
    f = click.option('--split', type=click.Choice(['train', 'valid', 'test']), default=None,
                     help='Split to evaluate on (default test).')(f)
    f = click.option('--tome', type=int, default=None, help='Absolute ToME target (TV-tokens left).')(f)
    f = click.option('--sigma', type=float, default=None, help='HSR width in steps.')(f)
    f = click.option('--context-size', type=int, default=None, help='HSR context points.')(f)
    f = click.option('--horizons', default=None, help='Comma-separated horizons (default 96,192,336,720).')(f)
    return f


def _app(config_path, seed, out, dataset_path, horizons, context_size, sigma, tome, split, max_windows):
    return make_app(config_path, seed, out, dataset_path, **{
        'eval.horizons': parse_ints(horizons, 'horizons'), 'eval.context_size': context_size,
        'eval.sigma': sigma, 'eval.tome_target': tome, 'eval.split': split, 'eval.max_windows': max_windows})


def _forecaster(checkpoint, theta0, protocol):
    if theta0:
        return ThetaZeroForecaster(lam=protocol.init_lambda), None
    if not checkpoint:
        raise ConfigError("--checkpoint is required unless --theta0 is given")
    model, _ = load_checkpoint(checkpoint)
    return ModelForecaster(model, tome_target=protocol.tome_target, lam=protocol.init_lambda), model


@click.command('eval')
@run_options
@dataset_options
@checkpoint_option(required=False)
@protocol_options
@click.option('--theta0', is_flag=True, help='Score the theta_0-only baseline instead of a checkpoint.')
def cmd_eval(config_path, seed, out, dataset_path, synthetic, checkpoint, horizons, context_size, sigma, tome,
             split, max_windows, theta0):
    """Sliding-window MSE/MAE (and normalised variants) per horizon."""
    app = _app(config_path, seed, out, dataset_path, horizons, context_size, sigma, tome, split, max_windows)
    protocol = app.config.eval
    with output_dir(app, 'eval') as path:
        forecaster, _ = _forecaster(checkpoint, theta0, protocol)
        reports = [evaluate_forecast(forecaster, d, protocol) for d in load_datasets(app, synthetic)]
        frame = pd.concat([r.frame for r in reports], ignore_index=True)
        frame.to_csv(os.path.join(path, 'metrics.csv'), index=False)
        for report in reports:
            click.echo(report.wide().to_string())


@click.command('tune')
@run_options
@dataset_options
@checkpoint_option(required=False)
@protocol_options
@click.option('--contexts', default='180,360,540,720,1080', show_default=True, help='Context sizes to try.')
@click.option('--sigmas', default='90,180,360,720,1440', show_default=True, help='HSR widths to try.')
@click.option('--theta0', is_flag=True, help='Tune the theta_0-only baseline instead of a checkpoint.')
def cmd_tune(config_path, seed, out, dataset_path, synthetic, checkpoint, horizons, context_size, sigma, tome,
             split, max_windows, contexts, sigmas, theta0):
    """Grid search of HSR context size and sigma on the validation split."""
    app = _app(config_path, seed, out, dataset_path, horizons, context_size, sigma, tome, split, max_windows)
    protocol = app.config.eval
    if protocol.tome_target is not None:
        raise ConfigError("tune applies the ToME ratio to every context size; drop --tome (eval.tome_target)")
    with output_dir(app, 'tune') as path:
        forecaster, _ = _forecaster(checkpoint, theta0, protocol)
        best = {}
        for dataset in load_datasets(app, synthetic):
            result = tune_hsr(forecaster, dataset, parse_ints(contexts, 'contexts'),
                              parse_floats(sigmas, 'sigmas'), protocol)
            result.to_csv(os.path.join(path, f'{dataset.name}_heatmap.csv'))
            svg.heatmap(os.path.join(path, f'{dataset.name}_heatmap.svg'), result.heatmap,
                        title=f'{dataset.name}: validation MSE (context size x sigma)')
            best[dataset.name] = {'context_size': result.context_size, 'sigma': result.sigma,
                                  'mse': float(result.heatmap.loc[result.context_size, result.sigma])}
            click.echo(f"{dataset.name}: best context {result.context_size}, sigma {result.sigma:g}")
        write_json(os.path.join(path, 'best.json'), best)


@click.command('ablate')
@run_options
@dataset_options
@checkpoint_option(required=True)
@protocol_options
@click.option('--ablate', 'components', default=','.join(ABLATION_NAMES), show_default=True,
              help='Comma-separated components to skip one at a time.')
def cmd_ablate(config_path, seed, out, dataset_path, synthetic, checkpoint, horizons, context_size, sigma, tome,
               split, max_windows, components):
    """Skip each component in turn and report the metric change."""
    app = _app(config_path, seed, out, dataset_path, horizons, context_size, sigma, tome, split, max_windows)
    protocol = app.config.eval
    names = [c.strip() for c in components.split(',') if c.strip()]
    with output_dir(app, 'ablate') as path:
        model, _ = load_checkpoint(checkpoint)
        frames = []
        for dataset in load_datasets(app, synthetic):
            frame = ablate(model, dataset, names, protocol, lam=protocol.init_lambda)
            frame.insert(0, 'dataset', dataset.name)
            frames.append(frame)
            last = frame[frame['horizon'] == protocol.max_horizon]
            svg.bar_chart(os.path.join(path, f'{dataset.name}_ablation.svg'), last['component'].tolist(),
                          last['mse'].to_numpy(), title=f'{dataset.name}: MSE at H={protocol.max_horizon}')
        report = pd.concat(frames, ignore_index=True)
        report.to_csv(os.path.join(path, 'ablation.csv'), index=False)
        click.echo(report.to_string(index=False))


@click.command('sweep')
@run_options
@dataset_options
@checkpoint_option(required=True)
@protocol_options
@click.option('--contexts', default='128,256,540,1024,2048', show_default=True, help='Context sizes to time.')
@click.option('--repeats', type=int, default=20, show_default=True, help='Timed repetitions per size.')
def cmd_sweep(config_path, seed, out, dataset_path, synthetic, checkpoint, horizons, context_size, sigma, tome,
              split, max_windows, contexts, repeats):
    """Inference time and accuracy as a function of context size."""
    app = _app(config_path, seed, out, dataset_path, horizons, context_size, sigma, tome, split, max_windows)
    protocol = app.config.eval
    with output_dir(app, 'sweep') as path:
        model, _ = load_checkpoint(checkpoint)
        dataset = load_datasets(app, synthetic)[0]
        frame = cost_sweep(model, dataset, parse_ints(contexts, 'contexts'), protocol, repeats=repeats,
                           seed=app.config.seed)
        frame.to_csv(os.path.join(path, 'sweep.csv'), index=False)
        svg.line_plot(os.path.join(path, 'sweep_seconds.svg'), frame['context_size'],
                      {'seconds': frame['seconds']}, title='Inference time', x_label='context size',
                      y_label='seconds')
        svg.line_plot(os.path.join(path, 'sweep_mse.svg'), frame['context_size'], {'mse': frame['mse']},
                      title='MSE vs context size', x_label='context size', y_label='MSE')
        click.echo(frame.to_string(index=False))
