#!/usr/bin/env python3
"""
Error Types

Exception hierarchy shared by every package. Validation failures derive from
ValueError so callers can catch them with plain ``except ValueError``; the CLI
maps them to exit code 2.
"""


class ValidationError(ValueError):
    """Input data or arguments violate a documented invariant."""


class ConfigError(ValidationError):
    """A configuration file or section is malformed."""


class DatasetError(ValidationError):
    """A dataset directory does not match the documented layout."""


class CheckpointError(ValidationError):
    """A checkpoint directory is incomplete or inconsistent."""


class NonFiniteLossError(RuntimeError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, iteration, terms, diagnostics_path=None):
        self.iteration = iteration
        self.terms = terms
        self.diagnostics_path = diagnostics_path
        message = f"Non-finite loss at iteration {iteration}: {terms}"
        if diagnostics_path:
            message += f" (diagnostics written to {diagnostics_path})"
        super().__init__(message)
