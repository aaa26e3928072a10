"""
Command-line surface

Every command module exposes click commands that get registered on the
root group here. Library code raises DamError subclasses; main() turns
them into exit code 1 and anything unexpected into exit code 2.
"""
import logging
import sys

import click

from dam.errors import DamError

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


@click.group(context_settings={'help_option_names': ['-h', '--help']})
@click.option('--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False),
              default=None, help='Logging level (default: DAM_LOG_LEVEL or INFO).')
def cli(log_level):
    """Universal forecasting from HSR-sampled context and a basis of sinusoids."""
    from dam import configure_logging
    configure_logging(log_level)


def register_commands(group):
    from dam.commands import evaluate, forecast, impute, inspect, prepare, train
    group.add_command(prepare.cmd_prepare)
    group.add_command(train.cmd_train)
    group.add_command(train.cmd_finetune)
    group.add_command(forecast.cmd_forecast)
    group.add_command(impute.cmd_impute)
    group.add_command(evaluate.cmd_eval)
    group.add_command(evaluate.cmd_tune)
    group.add_command(evaluate.cmd_ablate)
    group.add_command(evaluate.cmd_sweep)
    group.add_command(inspect.cmd_inspect)
    return group


register_commands(cli)


def main(argv=None):
    """Run one command and return its exit code"""
    try:
        rv = cli.main(args=argv, prog_name='dam', standalone_mode=False)
    except DamError as e:
        click.echo(f"error: {type(e).__name__}: {e}", err=True)
        return EXIT_USER
    except click.ClickException as e:
        e.show()
        return EXIT_USER
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USER
    except Exception as e:
        logger.exception("Unexpected failure")
        click.echo(f"error: {type(e).__name__}: {e}", err=True)
        return EXIT_INTERNAL
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
