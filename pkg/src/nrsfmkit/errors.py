"""Exception types shared across the toolkit."""


class DegenerateShapeError(ValueError):
    """A point configuration is too degenerate for the requested operation."""


class FileFormatError(ValueError):
    """An input file is malformed or inconsistent with its header."""


class NumericalError(RuntimeError):
    """An optimization or evaluation produced non-finite values."""
