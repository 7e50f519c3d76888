"""Exception hierarchy shared by every cwat module."""


class CwatError(Exception):
    """Base class for all errors raised by cwat."""


class ShapeError(CwatError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(CwatError, ValueError):
    """A configuration is internally inconsistent or names unknown keys."""


class UsageError(CwatError, RuntimeError):
    """An API was called in an order or state it does not support."""


class InputError(CwatError, ValueError):
    """A value is outside the domain an operation accepts."""


class DataError(CwatError):
    """Input data (files, manifests, datasets) is missing or unusable."""


class EdfParseError(DataError):
    """An EDF byte stream does not follow the format.

    ``offset`` is the byte position of the offending field, when known.
    """

    def __init__(self, message, offset=None):
        self.offset = offset
        where = f" at offset {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")


class MissingChannelError(DataError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing channels: " + ", ".join(self.missing))


class NumericError(CwatError, ArithmeticError):
    """A loss or gradient became non-finite."""
