"""Exception hierarchy shared by the whole toolkit.

The CLI maps these onto process exit codes: ArgumentError -> 2,
FormatError -> 3, NumericalError -> 4.
"""


class CroscaleError(Exception):
    """Base class for all toolkit errors."""


class ArgumentError(CroscaleError, ValueError):
    """Invalid argument, out-of-range coordinate, or inconsistent config."""


class FormatError(CroscaleError, ValueError):
    """Malformed file, bad magic/version, truncated payload, dataset error."""


class NumericalError(CroscaleError, RuntimeError):
    """Numerical failure: training divergence or a degenerate filter."""
