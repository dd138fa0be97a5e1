"""Exception types raised by the toolkit."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap.

    ``residual`` holds the last measured residual so callers can decide
    whether the partial answer is usable.
    """

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = float(residual)


class EnumerationCapError(ValueError):
    """Exhaustive subset enumeration was requested on too many labels."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss; ``trace`` keeps the finite prefix."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace
