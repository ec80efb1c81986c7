"""Exception taxonomy shared by all gancollage modules."""


class CollageError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(CollageError, ValueError):
    """Array shapes or resolutions are incompatible with the operation."""


class ParameterError(CollageError, ValueError):
    """A parameter value is outside its allowed domain."""


class UsageError(CollageError, RuntimeError):
    """An API was called in a way its contract forbids."""


class ValidationError(CollageError, ValueError):
    """A recipe, mask, or spec object failed validation.

    ``pointer`` optionally carries a JSON pointer to the offending field.
    """

    def __init__(self, message, pointer=None):
        super().__init__(message)
        self.pointer = pointer


class NonFiniteError(CollageError, FloatingPointError):
    """A tensor operation produced NaN or Inf values."""


class SolverError(CollageError, RuntimeError):
    """An iterative solver failed to converge; carries the final residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DivergenceError(CollageError, RuntimeError):
    """A latent optimization diverged; carries a diagnostic summary."""


class CheckpointError(CollageError, ValueError):
    """A checkpoint file is malformed or does not match the model."""
