"""Exception taxonomy shared by all plausifill modules.

The CLI maps these onto exit codes: input/config/parse problems exit 1,
numeric failures (divergence, non-finite values, undefined statistics)
exit 2.
"""


class PlausifillError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PlausifillError):
    """Invalid configuration value or inconsistent option combination."""


class InputError(PlausifillError):
    """Malformed or out-of-contract runtime input (ids, shapes of data files, spans)."""


class ParseError(InputError):
    """A data file could not be parsed (missing column, bad label, duplicate id)."""


class ShapeError(PlausifillError):
    """Tensor shapes incompatible with the requested operation."""


class UsageError(PlausifillError):
    """API misuse (non-scalar loss in backward, duplicate parameter names)."""


class NumericError(PlausifillError):
    """Non-finite values, divergence, or an undefined statistic."""


class CheckpointError(InputError):
    """Corrupt, truncated, or architecturally incompatible checkpoint file."""
