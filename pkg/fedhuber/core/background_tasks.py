import threading
import time
import logging
import uuid
from datetime import datetime

from . import experiment, utils

logger = logging.getLogger(__name__)

# Global dictionary to track background tasks
background_tasks = {}
_lock = threading.Lock()


class BackgroundTask:
    """Represents a background experiment with status tracking"""

    def __init__(self, task_id, task_type, output_dir):
        self.task_id = task_id
        self.task_type = task_type
        self.output_dir = output_dir
        self.status = 'pending'
        self.progress = 0
        self.message = 'Task queued'
        self.created_at = utils.utc_now()
        self.started_at = None
        self.completed_at = None
        self.error = None
        self.result = None

    def to_dict(self):
        return {
            'task_id': self.task_id,
            'task_type': self.task_type,
            'output_dir': self.output_dir,
            'status': self.status,
            'progress': self.progress,
            'message': self.message,
            'created_at': self.created_at,
            'started_at': self.started_at,
            'completed_at': self.completed_at,
            'error': self.error,
            'result': self.result,
        }


def _start(task_type, output_dir, target, args):
    task_id = f"{task_type}_{uuid.uuid4().hex[:12]}"
    task = BackgroundTask(task_id, task_type, str(output_dir))
    with _lock:
        background_tasks[task_id] = task

    thread = threading.Thread(target=target, args=(task_id, *args), daemon=True)
    thread.start()
    return task_id


def start_experiment_task(spec):
    """Start a background thread running ``run_experiment(spec)``"""
    return _start('experiment', spec.output_dir, _run_experiment, (spec,))


def start_sweep_task(spec, param, values):
    """Start a background thread running ``run_sweep(spec, param, values)``"""
    return _start('sweep', spec.output_dir, _run_sweep, (spec, param, values))


def _progress(task):
    def update(done, total):
        task.progress = int(100 * done / total)
        task.message = f'{done}/{total} finished'
    return update


def _execute(task_id, label, work):
    task = background_tasks[task_id]
    try:
        task.status = 'running'
        task.started_at = utils.utc_now()
        task.message = f'Running {label}...'
        outcome = work(_progress(task))

        task.status = 'completed' if not outcome.failures else 'completed_with_failures'
        task.progress = 100
        task.message = f'{label.capitalize()} finished with {outcome.failures} failed fits'
        task.completed_at = utils.utc_now()
        task.result = {
            'rows_path': str(outcome.rows_path),
            'summary_path': str(outcome.summary_path),
            'failures': outcome.failures,
        }
        logger.info(f"Background task {task_id} completed ({outcome.failures} failed fits)")
    except Exception as e:
        task.status = 'failed'
        task.error = str(e)
        task.message = f'{label.capitalize()} failed: {e}'
        task.completed_at = utils.utc_now()
        logger.error(f"Background task {task_id} failed: {e}")


def _run_experiment(task_id, spec):
    _execute(task_id, 'experiment', lambda progress: experiment.run_experiment(spec, progress))


def _run_sweep(task_id, spec, param, values):
    _execute(task_id, 'sweep', lambda progress: experiment.run_sweep(spec, param, values, progress))


def get_task_status(task_id):
    """Get a background task, or None if unknown"""
    return background_tasks.get(task_id)


def list_tasks():
    with _lock:
        return [task.to_dict() for task in background_tasks.values()]


def cleanup_completed_tasks(max_age_hours=24):
    """Drop finished tasks older than ``max_age_hours``"""
    cutoff_time = time.time() - (max_age_hours * 3600)

    tasks_to_remove = []
    with _lock:
        for task_id, task in background_tasks.items():
            if task.completed_at:
                try:
                    task_time = datetime.fromisoformat(task.completed_at.replace('Z', '+00:00'))
                    if task_time.timestamp() < cutoff_time:
                        tasks_to_remove.append(task_id)
                except ValueError:
                    tasks_to_remove.append(task_id)

        for task_id in tasks_to_remove:
            del background_tasks[task_id]

    if tasks_to_remove:
        logger.info(f"Cleaned up {len(tasks_to_remove)} old background tasks")
    return len(tasks_to_remove)
