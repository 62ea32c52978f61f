from flask import Blueprint, current_app, jsonify, request
import logging
import os

import pandas as pd

from ..config import parse_spec
from ..core import background_tasks, utils
from ..core.errors import UsageError
from ..core.experiment import validate_sweep

logger = logging.getLogger(__name__)

experiment_bp = Blueprint('experiment', __name__)

SWEEP_FIELDS = ('param', 'values')


def _results_root():
    return os.path.abspath(current_app.config['RESULTS_ROOT'])


def _output_dir(name, default):
    """Resolve an output directory name inside the results root"""
    root = _results_root()
    target = os.path.abspath(os.path.join(root, name or default))
    if os.path.commonpath([root, target]) != root or target == root:
        raise UsageError(f"output_dir must name a directory inside the results root, got {name!r}")
    return target


def _spec_from_body(body, default_name):
    if not isinstance(body, dict):
        raise UsageError('Request body must be a JSON object of spec keys')
    values = {key: value for key, value in body.items() if key not in SWEEP_FIELDS}
    values['output_dir'] = _output_dir(values.get('output_dir'), default_name)
    return parse_spec(values)


def _accepted(task_id, output_dir):
    return jsonify({
        'message': 'Task started',
        'task_id': task_id,
        'output_dir': output_dir,
        'status_url': f'/api/experiment/{task_id}/status',
        'summary_url': f'/api/experiment/{task_id}/summary',
        'timestamp': utils.utc_now()
    }), 202


@experiment_bp.route('/api/experiment', methods=['POST'])
def start_experiment():
    """Validate a spec and run it in the background"""
    body = request.get_json(silent=True)
    spec = _spec_from_body(body, f"experiment-{utils.utc_now().replace(':', '')}")
    task_id = background_tasks.start_experiment_task(spec)
    logger.info(f"Started experiment task {task_id} -> {spec.output_dir}")
    return _accepted(task_id, spec.output_dir)


@experiment_bp.route('/api/sweep', methods=['POST'])
def start_sweep():
    """Validate a spec plus ``param`` and ``values`` and run the sweep in the background"""
    body = request.get_json(silent=True)
    spec = _spec_from_body(body, f"sweep-{utils.utc_now().replace(':', '')}")
    values = body.get('values')
    if isinstance(values, str):
        try:
            values = [float(value) for value in values.split(',') if value.strip()]
        except ValueError as e:
            raise UsageError(f"Sweep values must be numbers, got {body.get('values')!r}") from e
    values = validate_sweep(spec, body.get('param'), values or [])
    task_id = background_tasks.start_sweep_task(spec, body['param'], values)
    logger.info(f"Started sweep task {task_id} over {body['param']} -> {spec.output_dir}")
    return _accepted(task_id, spec.output_dir)


@experiment_bp.route('/api/experiments', methods=['GET'])
def list_experiments():
    """Runs recorded under the results root and the tasks of this process"""
    background_tasks.cleanup_completed_tasks(current_app.config['TASK_MAX_AGE_HOURS'])
    runs = utils.get_all_runs(_results_root())
    return jsonify({
        'runs': [
            {
                'name': name,
                'kind': info.get('kind'),
                'status': info.get('status'),
                'failures': info.get('failures'),
                'completed_at': info.get('completed_at')
            }
            for name, info in runs.items()
        ],
        'tasks': background_tasks.list_tasks(),
        'total_runs': len(runs),
        'timestamp': utils.utc_now()
    })


def _task_or_404(task_id):
    task = background_tasks.get_task_status(task_id)
    if task is None:
        return None, (jsonify({'error': f'Task {task_id} not found'}), 404)
    return task, None


@experiment_bp.route('/api/experiment/<task_id>/status', methods=['GET'])
def experiment_status(task_id):
    task, missing = _task_or_404(task_id)
    if missing:
        return missing
    return jsonify(task.to_dict())


@experiment_bp.route('/api/experiment/<task_id>/summary', methods=['GET'])
def experiment_summary(task_id):
    """Summary rows of a finished task as JSON (empty cells become null)"""
    task, missing = _task_or_404(task_id)
    if missing:
        return missing
    if task.status not in ('completed', 'completed_with_failures'):
        return jsonify({
            'error': f'Task {task_id} has no summary yet',
            'status': task.status,
            'message': task.error or task.message
        }), 409
    frame = pd.read_csv(task.result['summary_path'])
    rows = frame.astype(object).where(frame.notna(), None).to_dict(orient='records')
    return jsonify({
        'task_id': task_id,
        'status': task.status,
        'failures': task.result['failures'],
        'summary': rows
    })
