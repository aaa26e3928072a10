import logging
import os

import click
import pandas as pd

from dam.commands.common import dataset_options, load_datasets, make_app, output_dir, run_options
from dam.utils.data_loader import normalise_utilities, save_csv, utility_components
from dam.utils.reports import write_json

logger = logging.getLogger(__name__)


@click.command('prepare')
@run_options
@dataset_options
@click.option('--normalization', type=click.Choice(['global', 'dataset']), default=None,
              help='Utility normalisation (default from config).')
def cmd_prepare(config_path, seed, out, dataset_path, synthetic, normalization):
    """Validate datasets, write per-split CSVs and per-channel sampling utilities."""
    app = make_app(config_path, seed, out, dataset_path)
    mode = normalization or app.config.train.utility_normalization
    with output_dir(app, 'prepare') as path:
        rows, summary = [], []
        for dataset in load_datasets(app, synthetic):
            for split in ('train', 'valid', 'test'):
                views = dataset.split_series(split)
                if views and len(views[0]):
                    save_csv(views, os.path.join(path, f"{dataset.name}_{split}.csv"), dataset.time_unit)
            for s in dataset.split_series('train'):
                parts = utility_components(s)
                rows.append({'dataset': dataset.name, 'channel': s.name, 'profile_std': parts.profile_std,
                             'spread': parts.spread, 'basis': parts.basis, 'utility': parts.utility})
            summary.append({'name': dataset.name, 'channels': len(dataset.series), 'rows': len(dataset.series[0]),
                            'train': len(dataset.split.train), 'valid': len(dataset.split.valid),
                            'test': len(dataset.split.test), 'tick_days': dataset.time_unit.tick_days})
        frame = pd.DataFrame(rows)
        frame['probability'] = normalise_utilities(frame['utility'].to_numpy(), frame['dataset'].tolist(), mode)
        frame.to_csv(os.path.join(path, 'utilities.csv'), index=False)
        write_json(os.path.join(path, 'datasets.json'), {'datasets': summary, 'normalization': mode})
        click.echo(f"prepared {len(summary)} dataset(s) into {path}")
