class AgnnError(Exception):
    """Base class for errors raised by this package."""


class DataError(AgnnError):
    """Malformed or inconsistent input files / dataset parameters."""


class NumericError(AgnnError):
    """Non-finite values during training or optimization."""
