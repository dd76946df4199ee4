"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError (and
subclasses) -> 3, NumericalError -> 4.
"""


class TrajbehavError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(TrajbehavError):
    """Tensor shapes incompatible with an operation."""


class ConfigError(TrajbehavError):
    """Invalid configuration, unusable parameter combination, or misuse."""


class DataError(TrajbehavError):
    """Invalid data content (out-of-range labels, non-finite values, ...)."""


class IngestError(DataError):
    """Malformed input file; message lists the offending rows."""


class CheckpointError(DataError):
    """Unreadable, corrupt, or incompatible persisted artifact."""


class StateError(TrajbehavError):
    """Operation invoked on an object in the wrong state (e.g. untrained)."""


class NumericalError(TrajbehavError):
    """Non-finite values encountered where finiteness is guaranteed."""
