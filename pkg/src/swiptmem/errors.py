"""Exception types shared across the package.

Invalid arguments raise the builtin ``ValueError``; the classes here cover
failures that occur after inputs have been accepted.
"""


class NumericFailure(RuntimeError):
    """A numerical routine failed to converge or produced non-finite values.

    Carries an optional ``residual`` estimate describing how far the
    computation was from its target when it gave up.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class TrainingFailure(NumericFailure):
    """Surrogate training diverged; ``last_epoch`` is the last finite epoch."""

    def __init__(self, message, last_epoch=None):
        super().__init__(message)
        self.last_epoch = last_epoch


class LogicError(RuntimeError):
    """An internal contract was violated (e.g. a drawn symbol with zero probability)."""
