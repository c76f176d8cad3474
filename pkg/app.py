import logging
import sys

import click
from dotenv import load_dotenv

from utils.config import configure_logging, settings
from utils.errors import ConfigError, ToolkitError

# Load environment variables
load_dotenv()

VERSION = '1.0.0'

logger = logging.getLogger(__name__)


def create_app():
    """Application factory pattern"""

    @click.group(name='tdaudit', context_settings={'help_option_names': ['-h', '--help']})
    @click.version_option(VERSION, prog_name='tdaudit')
    @click.option('--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False),
                  default=lambda: settings.log_level, show_default='TDAUDIT_LOG_LEVEL or INFO')
    def app(log_level):
        """Truth discovery and fairness audit toolkit for crowdsourced binary labels"""
        configure_logging(log_level)

    # Register commands
    register_commands(app)

    # Register error handlers
    register_error_handlers(app)

    return app


def register_commands(app):
    """Register all commands"""
    from commands.simulate import simulate_cmd
    from commands.audit import audit_cmd
    from commands.aggregate import aggregate_cmd
    from commands.downstream import downstream_cmd
    from commands.fair_compare import fair_compare_cmd
    from commands.pipeline import pipeline_cmd
    app.add_command(simulate_cmd)
    app.add_command(audit_cmd)
    app.add_command(aggregate_cmd)
    app.add_command(downstream_cmd)
    app.add_command(fair_compare_cmd)
    app.add_command(pipeline_cmd)


def report_error(error):
    """One line per problem on standard error, prefixed with the error category"""
    if isinstance(error, ConfigError):
        for problem in error.problems:
            click.echo(f'error [{error.category}]: {problem}', err=True)
    else:
        click.echo(f'error [{error.category}]: {error.message}', err=True)


def register_error_handlers(app):
    """Map toolkit errors to exit codes; click's own usage errors pass through"""
    invoke = app.invoke

    def guarded_invoke(ctx):
        try:
            return invoke(ctx)
        except (click.exceptions.ClickException, click.exceptions.Exit, click.exceptions.Abort):
            raise
        except ToolkitError as e:
            report_error(e)
            ctx.exit(e.exit_code)
        except Exception as e:
            logger.exception('Unexpected failure')
            click.echo(f'error [internal]: {e}', err=True)
            ctx.exit(1)

    app.invoke = guarded_invoke


# Create app instance
app = create_app()


def main():
    app(prog_name='tdaudit')


if __name__ == '__main__':
    sys.exit(main())
