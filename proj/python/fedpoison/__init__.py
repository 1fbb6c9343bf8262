"""Python front end for the fedpoison C++ core.

Configs may be given as dicts or JSON text; results come back as plain lists.
"""

import json

from . import _fedpoison as _core
from ._fedpoison import (
    METRICS_COLUMNS,
    ConfigError,
    InvalidArgument,
    boost,
    coomed,
    krum_select,
    read_weights,
    weighted_average,
)

__all__ = [
    "METRICS_COLUMNS",
    "ConfigError",
    "InvalidArgument",
    "boost",
    "coomed",
    "default_config",
    "krum_select",
    "read_metrics",
    "read_weights",
    "resolve_config",
    "run",
    "validate",
    "weighted_average",
]


def _text(config):
    return config if isinstance(config, str) else json.dumps(config)


def default_config():
    return json.loads(_core.default_config())


def resolve_config(config):
    return json.loads(_core.resolve_config(_text(config)))


def validate(config):
    return _core.validate(_text(config))


def run(config, out_dir=None):
    """Runs an experiment. Returns {"metrics": {column: [values]}, "kappa", "final_params"}."""
    return _core.run(_text(config), "" if out_dir is None else str(out_dir))


def read_metrics(path):
    return _core.read_metrics(str(path))
