"""Exception types shared across the package.

The CLI maps :class:`ValidationError` to exit code 1 and
:class:`NumericalError` (and subclasses) to exit code 2.
"""


class ValidationError(ValueError):
    """Input fails a structural or physical precondition."""


class NumericalError(RuntimeError):
    """A computation could not produce a trustworthy result."""


class DegenerateMidgapError(NumericalError):
    """Zero-energy subspace cannot be split into chiral partners."""

    def __init__(self, indices, message=None):
        self.indices = tuple(int(i) for i in indices)
        if message is None:
            message = (
                "ambiguous zero-energy eigenvalues at indices "
                f"{self.indices}; cannot assign spectral halves"
            )
        super().__init__(message)


class GapClosingError(NumericalError):
    """Winding number requested at a gap closing (v == w)."""


class FitUnsupportedError(NumericalError):
    """State profile does not support the requested fit."""


class ExtrapolationError(ValidationError):
    """Table lookup outside the sampled voltage range."""
