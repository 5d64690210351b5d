"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class DensityUnboundedError(ValueError):
    """The Dirichlet density diverges at the requested boundary point."""


class NumericalError(RuntimeError):
    """An iterative routine produced non-finite values.

    ``iteration`` holds the 0-based iteration at which the failure was
    detected, when applicable.
    """

    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class FormatError(ValueError):
    """A binary or text container failed to parse.

    ``offset`` is a byte offset for binary formats, ``line`` a 1-based
    line number for text formats; either may be None.
    """

    def __init__(self, message: str, offset: int | None = None, line: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.offset = offset
        self.line = line
