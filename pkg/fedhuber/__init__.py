"""Simulator for robust clustered federated sparse regression."""

__version__ = '1.0.0'
