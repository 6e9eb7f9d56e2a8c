"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2, data-shaped
failures (FormatError, DataError, JoinError, ShapeError, StateError,
DegenerateError) -> 3, numeric/training failures (NumericsError,
TrainError) -> 4.
"""


class TrialignError(Exception):
    """Base class for all package errors."""


class ConfigError(TrialignError):
    """Invalid configuration value, key, or combination."""


class FormatError(TrialignError):
    """Malformed on-disk container: bad magic, truncated payload, bad header."""


class DataError(TrialignError):
    """Input violates a data invariant (non-finite values, zero rows, bad ids)."""


class JoinError(TrialignError):
    """Modality files cannot be joined into aligned triplets."""


class ShapeError(TrialignError):
    """Array dimensions do not match the declared contract."""


class StateError(TrialignError):
    """Stale or mismatched internal state (e.g. backward with an outdated cache)."""


class NumericsError(TrialignError):
    """Non-finite values where finite arithmetic is required."""


class TrainError(TrialignError):
    """Training diverged or could not proceed."""


class DegenerateError(TrialignError):
    """Statistic undefined on the given input (e.g. constant series)."""
