import logging
import os

import click
import numpy as np
import pandas as pd

from dam.commands.common import (checkpoint_option, dataset_options, extend_past_end, load_datasets, make_app,
                                 output_dir, run_options, select_channels)
from dam.ml import autograd as ag
from dam.ml.basis import coefficient_amplitudes, composition_by_frequency
from dam.ml.hsr import context_config, sample_context
from dam.ml.network import summarize_attention
from dam.models import CoefficientVector
from dam.utils import svg
from dam.utils.checkpoint import load_checkpoint
from dam.utils.reports import attention_frame, cumulative_attention_frame

logger = logging.getLogger(__name__)

COMPOSITION_FRACTIONS = (0.1, 0.25, 0.5, 1.0)


@click.command('inspect')
@run_options
@dataset_options
@checkpoint_option(required=True)
@click.option('--channel', default=None, help='Channel to inspect (default: the first).')
@click.option('--now', 'now_index', type=int, default=None, help='Row index used as now (default: past the end).')
@click.option('--context-size', type=int, default=None, help='HSR context points.')
@click.option('--sigma', type=float, default=None, help='HSR width in steps.')
@click.option('--tome', type=int, default=None, help='Absolute ToME target (TV-tokens left).')
@click.option('--span', type=float, default=28.0, show_default=True,
              help='Days before and after now covered by the composition plot.')
def cmd_inspect(config_path, seed, out, dataset_path, synthetic, checkpoint, channel, now_index, context_size,
                sigma, tome, span):
    """Export attention weights, coefficients per period and partial compositions for one context."""
    app = make_app(config_path, seed, out, dataset_path, **{
        'eval.context_size': context_size, 'eval.sigma': sigma, 'eval.tome_target': tome})
    protocol = app.config.eval
    with output_dir(app, 'inspect') as path:
        model, _ = load_checkpoint(checkpoint)
        dataset = load_datasets(app, synthetic)[0]
        series = select_channels(dataset, [channel] if channel else None)[0]
        if now_index is None:
            series = extend_past_end(series)
            now_index = len(series) - 1
        draw = sample_context(series, context_config(protocol.sigma, protocol.context_size), app.rng('eval'),
                              now_index=now_index)
        batch = model.context_batch([draw], protocol.init_lambda)
        with ag.no_grad():
            output = model.forward(batch, record=True, tome_target=protocol.tome_target)
        summary = summarize_attention(output, batch.context_size)

        attention_frame(summary).to_csv(os.path.join(path, 'attention.csv'), index=False)
        cumulative = cumulative_attention_frame(summary, batch.times[0])
        cumulative.to_csv(os.path.join(path, 'cumulative_attention.csv'), index=False)
        if not cumulative.empty:
            grid = cumulative.pivot_table(index='layer', columns='head', values='attention', aggfunc='mean')
            svg.heatmap(os.path.join(path, 'cumulative_attention.svg'), grid,
                        title='Mean cumulative attention per layer and head')

        fn = model.forecast_functions(output)[0]
        coefficients = coefficient_amplitudes(fn.theta, model.spec)
        coefficients['theta0_amplitude'] = CoefficientVector(batch.theta0[0]).amplitudes
        coefficients.to_csv(os.path.join(path, 'coefficients.csv'), index=False)
        svg.bar_chart(os.path.join(path, 'coefficients.svg'),
                      [f"{p:.4g}d" for p in coefficients['period_days']], coefficients['amplitude'].to_numpy(),
                      title='Coefficient amplitude per period')

        query = np.linspace(-span, span, 512)
        lines = {f'{int(f * 100)}% lowest': composition_by_frequency(fn, query, f) for f in COMPOSITION_FRACTIONS}
        pd.DataFrame({'query_days': query, **lines}).to_csv(os.path.join(path, 'composition.csv'), index=False)
        svg.line_plot(os.path.join(path, 'composition.svg'), query, lines,
                      title='Forecast from the lowest frequencies', x_label='days from now', y_label='value')
        logger.info(f"Token counts per layer: {output.token_counts}")
        click.echo(f"inspected {dataset.name}/{series.name} into {path}")
