"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Invalid model, agent, or mechanism parameters."""


class DomainError(ValueError):
    """Argument outside the domain on which a function is defined."""


class NonConvergenceError(RuntimeError):
    """A fixed-point iteration ran out of iterations.

    The last iterate is kept on ``last`` so callers can inspect it.
    """

    def __init__(self, message, last=None, iterations=0):
        super().__init__(message)
        self.last = last
        self.iterations = iterations
