"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericalError -> 4.
"""


class FlatTrackError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(FlatTrackError):
    """Bad configuration: unknown key, unparsable value, invalid parameter."""


class DataError(FlatTrackError):
    """Bad data artifact: malformed file, broken manifest, missing path."""


class FormatError(DataError):
    """Malformed binary image/model file (bad magic, dims, truncation)."""


class NumericalError(FlatTrackError):
    """Numerical failure: NaN loss, degenerate mask, dimension overflow."""


class UnprojectableGazeError(NumericalError):
    """Gaze vector parallel to or facing away from the screen (v_z <= 1e-6)."""
