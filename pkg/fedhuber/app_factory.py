import logging
import os

from flask import Flask
from flask_cors import CORS

from .config import configure_app
from .logging_config import configure_logging
from .api import register_blueprints
from .middleware import setup_middleware
from .core.errors import UsageError
from .core.utils import initialize_run_system

logger = logging.getLogger(__name__)


def create_app(overrides=None):
    """Experiment service; ``overrides`` replace config keys read from the environment"""
    configure_logging()
    app = Flask(__name__)
    configure_app(app)
    app.config.update(overrides or {})

    max_age = app.config['TASK_MAX_AGE_HOURS']
    if max_age <= 0:
        raise UsageError(f"TASK_MAX_AGE_HOURS must be positive, got {max_age}")
    app.config['RESULTS_ROOT'] = os.path.abspath(app.config['RESULTS_ROOT'])

    CORS(app)
    register_blueprints(app)
    setup_middleware(app)
    runs = initialize_run_system(app.config['RESULTS_ROOT'])
    logger.info(
        f"Experiment service ready: results under {app.config['RESULTS_ROOT']} "
        f"({len(runs)} runs), finished tasks kept {max_age:g}h"
    )
    return app
