"""Exception types shared across the package.

The CLI maps these onto process exit codes (see :mod:`decorrmil.cli`):
configuration problems exit 2, data problems exit 3, numeric failures
exit 4.
"""

from __future__ import annotations


class DecorrMILError(Exception):
    """Base class for package-specific failures."""


class ConfigError(DecorrMILError):
    """Invalid or inconsistent configuration values."""


class DataError(DecorrMILError):
    """Dataset files or in-memory bags violate the format contract.

    Carries a short machine-readable ``code`` so callers can distinguish
    failure kinds without parsing messages.
    """

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class NumericError(DecorrMILError):
    """Non-finite values or a diverging optimization.

    ``trace`` optionally holds the loss history leading up to the failure.
    """

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
