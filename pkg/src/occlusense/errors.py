"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage/configuration problems
exit 1, malformed input data exits 2, anything else (internal invariant
violations included) exits 3.
"""


class ConfigError(Exception):
    """Bad configuration or command usage."""


class DataError(Exception):
    """Malformed or unreadable input data (datasets, annotations, models)."""


class SpecMismatchError(ValueError):
    """Two grid-shaped objects do not share a compatible layout."""
