class ProNoGError(Exception):
    """Base class of all toolkit errors. `exit_code` is used by the CLI."""

    exit_code = 1


class ConfigError(ProNoGError, ValueError):
    """Invalid configuration, unknown key or unsupported tag."""

    exit_code = 1


class DataError(ProNoGError, ValueError):
    """Malformed data file, invalid graph, or insufficient labeled instances."""

    exit_code = 2


class UndefinedRatioError(DataError):
    """Homophily ratio requested on an empty edge set or isolated node."""


class InvalidTripletError(DataError):
    """Triplet (u, a, b) does not satisfy (u, a) in E and (u, b) not in E."""


class NumericError(ProNoGError, ArithmeticError):
    """Shape mismatch, non-finite values or failed numerical check."""

    exit_code = 3


class KernelError(NumericError):
    """Similarity kernel unsupported by the requested operation."""


class FreezeError(ProNoGError, RuntimeError):
    """Attempt to update or backpropagate into frozen parameters."""

    exit_code = 3
