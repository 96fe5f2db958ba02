"""Exception hierarchy.

Validation problems (bad arguments, malformed files) derive from
:class:`ValidationError`; numerical breakdowns derive from
:class:`NumericalError`. The CLI maps the two families to exit codes 1 and 2.
"""


class CrossmapError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(CrossmapError, ValueError):
    """An argument or input violates a precondition."""


class ParseError(ValidationError):
    """A data file could not be parsed; the message names file and location."""


class NumericalError(CrossmapError, ArithmeticError):
    """A numerical routine could not produce a trustworthy result."""


class SymmetryError(NumericalError):
    pass


class SingularSystemError(NumericalError):
    pass


class DegenerateGraphError(NumericalError):
    pass


class DegenerateSimilarityError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass


class StageError(CrossmapError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
