"""Exception types shared across the package.

The CLI maps these onto process exit codes, so anything that should
surface as a clean command failure must raise one of them instead of a
bare Exception.
"""


class ScreidError(Exception):
    """Base class for all package errors."""


class UsageError(ScreidError):
    """Bad command line invocation (unknown flag, missing argument)."""


class ConfigError(ScreidError):
    """Configuration file failed validation (unknown key, bad value)."""


class DataFormatError(ScreidError):
    """Dataset or checkpoint file is malformed or unreadable."""


class NumericalError(ScreidError):
    """A non-finite value appeared where the math requires finite ones."""
