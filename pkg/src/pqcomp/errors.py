"""Exception types shared across the toolkit."""


class ShapeError(ValueError):
    pass


class StateError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


class FormatError(ValueError):
    pass


class DomainError(ValueError):
    pass


class PrecisionError(ArithmeticError):
    pass


class MantissaOverflowError(OverflowError):
    pass


class VerificationError(AssertionError):
    """Raised when the shift-add path disagrees with exact multiplication."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair
