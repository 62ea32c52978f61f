from flask import request, jsonify
import logging

from .core.errors import FedHuberError
from .core.utils import utc_now

logger = logging.getLogger(__name__)


def error_response(error, message, status):
    return jsonify({
        'error': error,
        'message': message,
        'timestamp': utc_now()
    }), status


def setup_middleware(app):
    """Setup request/response logging and error handlers"""

    @app.before_request
    def log_request():
        logger.info(f"{request.method} {request.path} - {request.remote_addr}")

    @app.after_request
    def log_response(response):
        logger.info(f"Response: {response.status_code}")
        return response

    @app.errorhandler(FedHuberError)
    def invalid_request(error):
        logger.warning(f"Rejected request: {error}")
        return error_response(type(error).__name__, str(error), 400)

    @app.errorhandler(404)
    def not_found(error):
        return error_response('Endpoint not found', 'The requested endpoint does not exist', 404)

    @app.errorhandler(405)
    def method_not_allowed(error):
        return error_response('Method not allowed', f'{request.method} is not supported on {request.path}', 405)

    @app.errorhandler(500)
    def internal_error(error):
        return error_response('Internal server error', 'Something went wrong on the server', 500)
