"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage/configuration problems
exit 1, data problems exit 2, numerical failures exit 3.
"""


class SerkitError(Exception):
    """Base class for all package errors."""


class ConfigError(SerkitError):
    """Invalid configuration or arguments (CLI exit code 1)."""


class DataError(SerkitError):
    """Malformed or inconsistent input data (CLI exit code 2)."""


class AudioFormatError(DataError):
    """Unreadable or unsupported audio file."""


class ManifestError(DataError):
    """Malformed corpus manifest."""


class NumericsError(SerkitError):
    """Numerical failure during training or checking (CLI exit code 3)."""
