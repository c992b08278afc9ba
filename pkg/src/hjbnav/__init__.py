"""Composable continuous-time actor-critic navigation with GP value models."""

__version__ = "0.1.0"
