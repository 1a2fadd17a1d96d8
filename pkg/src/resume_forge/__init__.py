"""Resumable MLP training with verified checkpoints, plus Learn++ incremental ensembles."""

__version__ = "0.1.0"
