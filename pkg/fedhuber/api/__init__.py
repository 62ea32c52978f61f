from .status import status_bp
from .experiment import experiment_bp


def register_blueprints(app):
    app.register_blueprint(status_bp)
    app.register_blueprint(experiment_bp)
