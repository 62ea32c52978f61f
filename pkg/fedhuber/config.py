import os
import logging
from dataclasses import fields

from .core.errors import UsageError
from .core.experiment import ExperimentSpec

logger = logging.getLogger(__name__)

SEED_ENV = 'FEDHUBER_SEED'
RESULTS_ROOT_ENV = 'FEDHUBER_RESULTS_ROOT'
TASK_MAX_AGE_ENV = 'FEDHUBER_TASK_MAX_AGE_HOURS'

# Element types of the list-valued spec keys
LIST_KEYS = {
    'csv_paths': str,
    'methods': str,
    'k_values': int,
    's_values': int,
    'q_values': int,
    'lambda_values': float,
    'eta_values': float,
}
OPTIONAL_KEYS = {'q': int, 'noise': str}
SPEC_TYPES = {f.name: f.type for f in fields(ExperimentSpec)}
TRUE_WORDS = {'true', 'yes', 'on', '1'}
FALSE_WORDS = {'false', 'no', 'off', '0'}


def configure_app(app):
    app.config['JSON_SORT_KEYS'] = False
    app.config['JSONIFY_PRETTYPRINT_REGULAR'] = True
    app.config['RESULTS_ROOT'] = os.getenv(RESULTS_ROOT_ENV, 'results')
    app.config['TASK_MAX_AGE_HOURS'] = _convert_scalar(TASK_MAX_AGE_ENV, float, os.getenv(TASK_MAX_AGE_ENV, '24'))


def _convert_scalar(key, kind, value):
    if isinstance(value, str):
        value = value.strip()
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            word = str(value).lower()
            if word in TRUE_WORDS:
                return True
            if word in FALSE_WORDS:
                return False
            raise ValueError(value)
        if kind is int:
            if isinstance(value, bool):
                raise ValueError(value)
            number = float(value)
            if not number.is_integer():
                raise ValueError(value)
            return int(number)
        if kind is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError) as e:
        raise UsageError(f"Invalid value {value!r} for '{key}' (expected {kind.__name__})") from e


def convert_value(key, value):
    """Typed value of one spec key from its text (or JSON) form"""
    if key not in SPEC_TYPES:
        raise UsageError(f"Unknown spec key '{key}'")
    if key in LIST_KEYS:
        if isinstance(value, str):
            items = [item.strip() for item in value.split(',') if item.strip()]
        elif isinstance(value, (list, tuple)):
            items = list(value)
        else:
            items = [value]
        return tuple(_convert_scalar(key, LIST_KEYS[key], item) for item in items)
    if key in OPTIONAL_KEYS:
        if value is None or (isinstance(value, str) and value.strip().lower() in ('', 'none', 'default')):
            return None
        return _convert_scalar(key, OPTIONAL_KEYS[key], value)
    kind = SPEC_TYPES[key]
    kind = {'int': int, 'float': float, 'bool': bool, 'str': str}.get(kind, kind)
    return _convert_scalar(key, kind, value)


def load_spec_file(path):
    """Read a flat ``key = value`` document; blank lines and ``#`` comments are ignored"""
    values = {}
    try:
        with open(path, 'r') as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise UsageError(f"Cannot read spec file {path}: {e}") from e
    for number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        if '=' not in line:
            raise UsageError(f"{path}, line {number}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split('=', 1))
        if key in values:
            raise UsageError(f"{path}, line {number}: key '{key}' is set twice")
        values[key] = value
    return values


def apply_overrides(values, overrides):
    """Apply ``key=value`` strings (from ``--set``) on top of a spec mapping"""
    merged = dict(values)
    for override in overrides or ():
        if '=' not in override:
            raise UsageError(f"Override {override!r} is not of the form key=value")
        key, value = (part.strip() for part in override.split('=', 1))
        merged[key] = value
    return merged


def parse_spec(values):
    """Build and validate an ExperimentSpec from a mapping of spec keys"""
    typed = {key: convert_value(key, value) for key, value in values.items()}
    spec = ExperimentSpec(**typed)
    return spec.validate()


def build_spec(path=None, overrides=(), base=None):
    """Spec file, then FEDHUBER_SEED, then ``--set`` overrides, then validation"""
    values = dict(base or {})
    if path is not None:
        values.update(load_spec_file(path))
    seed = os.getenv(SEED_ENV)
    if seed is not None:
        logger.info(f"Base seed overridden by {SEED_ENV}={seed}")
        values['seed'] = seed
    return parse_spec(apply_overrides(values, overrides))
