"""Command line front end: ``fedhuber run|sweep|tune|serve|submit|status``.

Exit codes: 0 success, 1 recorded fit failures (or an unreachable server),
2 invalid specification or usage.
"""

import os
import sys
import json
import logging
import argparse

import requests

from . import config
from .core import experiment
from .core.errors import FedHuberError, IngestionError, UsageError
from .logging_config import configure_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_USAGE = 2
DEFAULT_SERVER = os.getenv('FEDHUBER_SERVER', 'http://localhost:8000')
REQUEST_TIMEOUT = 30


def _parse_values(text):
    try:
        return [float(value) for value in text.split(',') if value.strip()]
    except ValueError as e:
        raise UsageError(f"--values must be a comma-separated list of numbers, got {text!r}") from e


def _spec(args):
    return config.build_spec(args.spec, args.overrides)


def cmd_run(args):
    outcome = experiment.run_experiment(_spec(args))
    print(f"rows: {outcome.rows_path}")
    print(f"summary: {outcome.summary_path}")
    if outcome.failures:
        print(f"{outcome.failures} fits failed (see the error column)", file=sys.stderr)
    return outcome.exit_code


def cmd_sweep(args):
    outcome = experiment.run_sweep(_spec(args), args.param, _parse_values(args.values))
    print(f"sweep: {outcome.rows_path}")
    if outcome.failures:
        print(f"{outcome.failures} fits failed (see the per-value rows.csv files)", file=sys.stderr)
    return outcome.exit_code


def cmd_tune(args):
    outcome = experiment.run_tuning(_spec(args))
    print(f"tuning: {outcome.rows_path}")
    print("selected: " + ", ".join(f"{key}={value}" for key, value in outcome.extra['selected'].items()))
    return EXIT_OK


def cmd_serve(args):
    from .app_factory import create_app

    app = create_app()
    logger.info(f"Starting server on {args.host}:{args.port}")
    try:
        app.run(host=args.host, port=args.port)
    except KeyboardInterrupt:
        logger.info("Server stopped by user")
    return EXIT_OK


def _report(response):
    try:
        body = response.json()
    except ValueError:
        body = {'error': response.text}
    print(json.dumps(body, indent=2))
    if response.status_code == 400:
        return EXIT_USAGE
    return EXIT_OK if response.ok else EXIT_FAILURES


def cmd_submit(args):
    values = config.apply_overrides(config.load_spec_file(args.spec), args.overrides)
    url = f"{args.server.rstrip('/')}/api/experiment"
    if args.param:
        values.update(param=args.param, values=_parse_values(args.values or ''))
        url = f"{args.server.rstrip('/')}/api/sweep"
    response = requests.post(url, json=values, timeout=REQUEST_TIMEOUT)
    return _report(response)


def cmd_status(args):
    url = f"{args.server.rstrip('/')}/api/experiment/{args.task_id}/{'summary' if args.summary else 'status'}"
    response = requests.get(url, timeout=REQUEST_TIMEOUT)
    return _report(response)


def build_parser():
    parser = argparse.ArgumentParser(prog='fedhuber', description='Robust clustered federated regression experiments')
    parser.add_argument('-v', '--verbose', action='store_true', help='Log solver details (DEBUG level)')
    commands = parser.add_subparsers(dest='command', required=True)

    def with_spec(sub):
        sub.add_argument('spec', help='Experiment spec file (key = value lines)')
        sub.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                         help='Override one spec key (repeatable)')
        return sub

    run = with_spec(commands.add_parser('run', help='Run replicated experiments'))
    run.set_defaults(handler=cmd_run)

    sweep = with_spec(commands.add_parser('sweep', help='Sweep h (Setting 3) or delta (Setting 4)'))
    sweep.add_argument('--param', required=True, choices=sorted(experiment.SWEEP_PARAMS))
    sweep.add_argument('--values', required=True, help='Comma-separated values, e.g. 0,0.5,1')
    sweep.set_defaults(handler=cmd_sweep)

    tune = with_spec(commands.add_parser('tune', help='Select (K, s, q, lambda) on replication 0'))
    tune.set_defaults(handler=cmd_tune)

    serve = commands.add_parser('serve', help='Start the HTTP experiment service')
    serve.add_argument('--host', default=os.environ.get('HOST', '0.0.0.0'))
    serve.add_argument('--port', type=int, default=int(os.environ.get('PORT', 8000)))
    serve.set_defaults(handler=cmd_serve)

    submit = with_spec(commands.add_parser('submit', help='Submit an experiment to a running service'))
    submit.add_argument('--server', default=DEFAULT_SERVER)
    submit.add_argument('--param', choices=sorted(experiment.SWEEP_PARAMS), help='Submit a sweep instead')
    submit.add_argument('--values', help='Sweep values for --param')
    submit.set_defaults(handler=cmd_submit)

    status = commands.add_parser('status', help='Show the status of a submitted task')
    status.add_argument('task_id')
    status.add_argument('--server', default=DEFAULT_SERVER)
    status.add_argument('--summary', action='store_true', help='Fetch the summary table instead')
    status.set_defaults(handler=cmd_status)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging('DEBUG' if args.verbose else None)
    try:
        return args.handler(args)
    except (UsageError, IngestionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FedHuberError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_FAILURES
    except requests.RequestException as e:
        logger.error(f"Could not reach {getattr(args, 'server', 'the server')}: {e}")
        return EXIT_FAILURES


if __name__ == '__main__':
    sys.exit(main())
