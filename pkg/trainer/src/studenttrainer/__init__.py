"""Trainer and server for sequence-to-sequence student models."""

__version__ = "0.1.0"
