"""Exception types shared across the package."""


class JLDictError(Exception):
    """Base class for all package errors."""


class InvalidArgument(JLDictError, ValueError):
    pass


class NumericalFailure(JLDictError, ArithmeticError):
    pass


class ParseError(JLDictError, ValueError):
    """Malformed input file.

    ``offset`` is a byte offset for binary formats, ``line`` a 1-based line
    number for text formats; whichever does not apply is None.
    """

    def __init__(self, message, *, offset=None, line=None):
        where = []
        if offset is not None:
            where.append(f"byte offset {offset}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.offset = offset
        self.line = line


class CorruptModel(JLDictError):
    """Model file failed checksum or structural validation."""
