"""Exception types shared across the package."""


class InputError(ValueError):
    """Raised when arguments violate a documented precondition."""


class NumericalError(ArithmeticError):
    """Raised when a factorization or other numerical step cannot be completed."""
