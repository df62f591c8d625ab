class DataError(ValueError):
    """Malformed or inconsistent input data (files, clouds, annotations)."""


class FormatError(DataError):
    """A binary container failed validation on read."""


class NumericalError(ArithmeticError):
    """Non-finite values appeared during a forward pass or training."""
