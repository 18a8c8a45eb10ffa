"""Potential-field guided actor-critic learning for predator-prey pursuit."""

__version__ = "0.1.0"
