import logging

import click

from dam.commands.common import (checkpoint_option, dataset_options, load_datasets, make_app, output_dir,
                                 run_options)
from dam.config import FINETUNE_PRESETS
from dam.errors import TrainingError
from dam.ml.network import DamModel
from dam.ml.training import build_corpus, finetune, train
from dam.utils.checkpoint import load_checkpoint, load_optimizer_state

logger = logging.getLogger(__name__)


def _corpora(datasets, cfg):
    corpus = build_corpus(datasets, cfg, 'train')
    try:
        val_corpus = build_corpus(datasets, cfg, 'valid')
    except TrainingError as e:
        logger.warning(f"No validation corpus ({e}); validation disabled")
        val_corpus = None
    return corpus, val_corpus


@click.command('train')
@run_options
@dataset_options
@checkpoint_option(required=False)
@click.option('--iterations', type=int, default=None, help='Stop after this many steps (schedule unchanged).')
@click.option('--resume/--no-resume', default=False, help='Continue the optimizer state and step of --checkpoint.')
def cmd_train(config_path, seed, out, dataset_path, synthetic, checkpoint, iterations, resume):
    """Train a model (from scratch or from --checkpoint)."""
    app = make_app(config_path, seed, out, dataset_path)
    cfg = app.config.train
    with output_dir(app, 'train') as path:
        corpus, val_corpus = _corpora(load_datasets(app, synthetic), cfg)
        start_step, optimizer = 0, None
        if checkpoint:
            model, manifest = load_checkpoint(checkpoint)
            if resume:
                from dam.ml.training import Adam
                optimizer = Adam(model.named_parameters(), cfg.betas, cfg.eps, cfg.weight_decay)
                load_optimizer_state(checkpoint, optimizer, manifest)
                start_step = int(manifest.get('step') or 0)
        else:
            model = DamModel(app.config.model, seed=app.config.seed)
        result = train(model, corpus, cfg, out_dir=path, val_corpus=val_corpus, optimizer=optimizer,
                       start_step=start_step, max_steps=iterations)
        click.echo(f"trained to step {result.final_step}; checkpoint {result.checkpoints[-1]}")


@click.command('finetune')
@run_options
@dataset_options
@checkpoint_option(required=True)
@click.option('--preset', type=click.Choice(sorted(FINETUNE_PRESETS)), default='default',
              help='Learning rate / iteration preset.')
@click.option('--iterations', type=int, default=None, help='Stop after this many steps.')
def cmd_finetune(config_path, seed, out, dataset_path, synthetic, checkpoint, preset, iterations):
    """Fine-tune a trained checkpoint on a held-out dataset."""
    app = make_app(config_path, seed, out, dataset_path)
    with output_dir(app, 'finetune') as path:
        corpus, val_corpus = _corpora(load_datasets(app, synthetic), app.config.train)
        model, _ = load_checkpoint(checkpoint)
        result = finetune(model, corpus, app.config.train, preset, out_dir=path, val_corpus=val_corpus,
                          max_steps=iterations)
        click.echo(f"fine-tuned for {result.final_step} steps; checkpoint {result.checkpoints[-1]}")
