"""Shared error hierarchy. The CLI maps these to exit codes."""


class PipelineError(Exception):
    """Base class for operational pipeline errors (CLI exit code 1)."""


class ConfigError(PipelineError):
    """Invalid configuration or usage (CLI exit code 2)."""
