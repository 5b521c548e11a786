"""Exception hierarchy shared by every tier."""


class IntecError(Exception):
    """Base class for all errors raised by this package."""


class EmptyInput(IntecError, ValueError):
    pass


class RankError(IntecError, ValueError):
    pass


class DivergedError(IntecError, ArithmeticError):
    pass


class ShapeMismatch(IntecError, ValueError):
    pass


class FormatError(IntecError, ValueError):
    """Raised when a binary payload or artifact cannot be decoded."""


class NoRoute(IntecError, LookupError):
    pass


class DuplicateSubscription(IntecError):
    pass


class StaleVersion(IntecError):
    """Firmware carries a model version that is not newer than the installed one."""


class UnknownDevice(IntecError, LookupError):
    pass


class InsufficientData(IntecError):
    pass


class InvalidConfig(IntecError, ValueError):
    pass


class ParseError(IntecError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
