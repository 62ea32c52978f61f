import os
import json
import logging
from datetime import datetime, timezone

logger = logging.getLogger(__name__)

RUN_FILE = '.run'


def utc_now():
    return datetime.now(timezone.utc).isoformat().replace('+00:00', 'Z')


def get_run_info(output_dir):
    """Get run information from the .run file of an output directory"""
    try:
        run_file = os.path.join(output_dir, RUN_FILE)
        if os.path.exists(run_file):
            with open(run_file, 'r') as f:
                return json.load(f)
        return None
    except (OSError, ValueError) as e:
        logger.error(f"Error reading run info in {output_dir}: {e}")
        return None


def save_run_info(output_dir, run_info):
    """Save run information to the .run file of an output directory"""
    try:
        run_file = os.path.join(output_dir, RUN_FILE)
        os.makedirs(output_dir, exist_ok=True)
        with open(run_file, 'w') as f:
            json.dump(run_info, f, indent=2, default=str)
        logger.debug(f"Saved run info to {run_file}")
    except OSError as e:
        logger.error(f"Error saving run info in {output_dir}: {e}")
        raise


def run_exists(output_dir):
    return os.path.exists(os.path.join(output_dir, RUN_FILE))


def get_all_runs(root):
    """Scan a results root (recursively) for output directories with a .run file"""
    runs = {}
    if not os.path.isdir(root):
        return runs
    for current, _, files in os.walk(root):
        if RUN_FILE in files:
            info = get_run_info(current)
            if info:
                runs[os.path.relpath(current, root)] = info
    return dict(sorted(runs.items()))


def initialize_run_system(root):
    """Create the results root and log the runs already present"""
    logger.info(f"Initializing results root {root}...")
    os.makedirs(root, exist_ok=True)
    runs = get_all_runs(root)
    logger.info(f"Found {len(runs)} existing runs: {list(runs.keys())}")
    for name, info in runs.items():
        logger.debug(f"Run: {name}, Kind: {info.get('kind')}, Status: {info.get('status')}")
    return runs
