import os

import click
import pandas as pd

from dam.commands.common import dataset_options, load_datasets, make_app, output_dir, parse_floats, run_options
from dam.ml.evaluation import IMPUTATION_RATES, IMPUTATION_WINDOW, evaluate_imputation


@click.command('impute')
@run_options
@dataset_options
@click.option('--rates', default=None, help='Comma-separated mask rates in percent (default 12.5,25,37.5,50).')
@click.option('--lam', type=float, default=None, help='Ridge strength of the theta_0 fit.')
@click.option('--window', type=int, default=IMPUTATION_WINDOW, show_default=True, help='Steps per fit window, centred on each imputed span.')
@click.option('--baseline/--no-baseline', default=True, help='Also score linear interpolation.')
def cmd_impute(config_path, seed, out, dataset_path, synthetic, rates, lam, window, baseline):
    """Imputation benchmark with whole-column masks and theta_0-only fits."""
    app = make_app(config_path, seed, out, dataset_path, **{'eval.init_lambda': lam})
    percents = parse_floats(rates, 'rates')
    fractions = tuple(p / 100.0 for p in percents) if percents else IMPUTATION_RATES
    with output_dir(app, 'impute') as path:
        frames = []
        for dataset in load_datasets(app, synthetic):
            frame = evaluate_imputation(dataset.series, fractions, lam=app.config.eval.init_lambda,
                                        seed=app.config.seed, window=window, baseline=baseline)
            frame.insert(0, 'dataset', dataset.name)
            frames.append(frame)
        report = pd.concat(frames, ignore_index=True)
        report.to_csv(os.path.join(path, 'imputation.csv'), index=False)
        click.echo(report.to_string(index=False))
