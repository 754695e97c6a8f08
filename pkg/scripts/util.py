"""Shared helpers for the SARE scripts: logging, config files, JSON output."""
import io
import json
import os
import platform

import colorlog
import numpy as np
import sklearn
import yaml
from jsonschema import ValidationError

__version__ = "1.0.0"

FLOAT_FORMAT = '.17g'


def setup_logging(verbose_count):
    """Attach a colored stderr handler to the root logger.

    Starts off at Error and drops one level for each -v.
    """
    logger = colorlog.getLogger()
    logger.setLevel(max(4 - verbose_count, 0) * 10)
    if not any(isinstance(h.formatter, colorlog.ColoredFormatter) for h in logger.handlers):
        handler = colorlog.StreamHandler()
        handler.setFormatter(colorlog.ColoredFormatter(
            '%(log_color)s%(levelname)s:%(name)s:%(message)s'))
        logger.addHandler(handler)
    return logger


def dict_raise_on_duplicates(ordered_pairs):
    """Reject duplicate keys."""
    d = {}
    for k, v in ordered_pairs:
        if k in d:
            raise ValidationError("duplicate key: %r" % (k,))
        else:
            d[k] = v
    return d


def load_config_file(filename):
    """Read a JSON (or YAML, by suffix) config file into a dict."""
    with io.open(filename, encoding='utf-8') as f:
        if filename.endswith(('.yml', '.yaml')):
            config = yaml.safe_load(f)
        else:
            config = json.load(f, object_pairs_hook=dict_raise_on_duplicates)
    if config is None:
        return {}
    if not isinstance(config, dict):
        raise ValidationError("{} must hold a mapping, got {}".format(filename, type(config).__name__))
    # Flags are spelled with dashes, keys with underscores.
    return {k.replace('-', '_'): v for k, v in config.items()}


def dumps(obj, indent=2):
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=indent, separators=(',', ': '))


def write_json(obj, path):
    with io.open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(dumps(obj))
        f.write('\n')


def format_float(value):
    return format(float(value), FLOAT_FORMAT)


def ensure_dir(path):
    if path and not os.path.exists(path):
        os.makedirs(path)
    return path


def versions():
    return {
        'sare': __version__,
        'numpy': np.__version__,
        'scikit-learn': sklearn.__version__,
        'python': platform.python_version(),
    }


def write_run_meta(directory, command, config):
    meta = {
        'command': command,
        'config': config,
        'seed': config.get('seed'),
        'versions': versions(),
    }
    path = os.path.join(ensure_dir(directory) or '.', 'run_meta.json')
    write_json(meta, path)
    return path
