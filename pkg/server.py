#!/usr/bin/env python3
"""
Experiment Service Entry Point
Same as ``fedhuber serve``; HOST and PORT come from the environment.
For production use gunicorn: gunicorn -b 0.0.0.0:8000 'fedhuber.app_factory:create_app()'
"""

import sys

from fedhuber.cli import main

if __name__ == '__main__':
    sys.exit(main(['serve', *sys.argv[1:]]))
