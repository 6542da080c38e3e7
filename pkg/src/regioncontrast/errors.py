"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class ConfigError(Exception):
    """Invalid run configuration (bad key, bad value, missing required field)."""


class DataError(Exception):
    """Dataset or checkpoint problem (missing file, corrupt content, mismatch)."""


class FormatError(DataError):
    """Malformed image/mask file (bad magic, wrong maxval, truncated payload)."""


class NumericError(Exception):
    """Non-finite value where the training loop requires a finite one."""


class RegionTooSmallError(ValueError):
    """Region has fewer pixels than the minimum needed for a stable fit."""
