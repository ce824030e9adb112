"""Exception types shared across the package.

Plain ``ValueError`` is used for domain errors on function arguments;
the classes below exist so the CLI can map failures to distinct exit codes.
"""


class ConfigError(Exception):
    """Invalid or unknown configuration (CLI exit code 2)."""


class DataModelMismatchError(Exception):
    """Dataset / checkpoint / geometry shapes disagree (CLI exit code 3)."""


class EstimationFailureError(Exception):
    """A numerical routine could not produce an estimate (CLI exit code 4)."""
