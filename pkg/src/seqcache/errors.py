"""Exception types raised across the package."""


class InvalidParameterError(ValueError):
    pass


class InfeasibleError(ValueError):
    """Budget or allocation constraints cannot be met."""


class UndefinedOutsideError(ValueError):
    """Outside-category quantities requested for a single-category library."""


class DivergenceError(ArithmeticError):
    pass


class EnumerationTooLarge(ValueError):
    pass
