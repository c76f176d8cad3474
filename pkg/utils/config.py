import logging
import os
import sys

import yaml
from dotenv import load_dotenv

from utils.errors import ConfigError

load_dotenv()


class Settings:
    """Process-wide defaults read from the environment (or a .env file)"""

    def __init__(self):
        self.seed = self._int_env('TDAUDIT_SEED', 0)
        self.threads = self._int_env('TDAUDIT_THREADS', 1)
        self.log_level = os.getenv('TDAUDIT_LOG_LEVEL', 'INFO').upper()
        self.output_dir = os.getenv('TDAUDIT_OUTPUT_DIR', 'results')

    @staticmethod
    def _int_env(name, fallback):
        raw = os.getenv(name)
        if raw is None or raw.strip() == '':
            return fallback
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f'{name} must be an integer, got {raw!r}')

    def to_dict(self):
        return {
            'seed': self.seed,
            'threads': self.threads,
            'log_level': self.log_level,
            'output_dir': self.output_dir
        }


def configure_logging(level='INFO'):
    """Send log records to standard error; data never goes through logging"""
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(name)s: %(message)s'))
    root.addHandler(handler)
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))


def load_yaml(path):
    """
    Read a YAML mapping from disk

    Args:
        path: Path to the YAML file

    Returns:
        dict: Parsed mapping
    """
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            data = yaml.safe_load(handle)
    except FileNotFoundError:
        raise ConfigError(f'config file not found: {path}')
    except yaml.YAMLError as e:
        raise ConfigError(f'config file {path} is not valid YAML: {e}')

    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f'config file {path} must contain a mapping at the top level')
    return data


def parse_grid(text, name):
    """Parse a comma-separated list of floats ('0,0.1,0.5'); 'inf' is accepted"""
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        values = list(text)
    else:
        values = [part for part in str(text).split(',') if part.strip() != '']
    try:
        return [float(value) for value in values]
    except (TypeError, ValueError):
        raise ConfigError(f'{name} must be a comma-separated list of numbers, got {text!r}')


# Global instance
settings = Settings()
