"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 2, data errors
exit 3, numerical errors exit 4.
"""


class UsageError(ValueError):
    """Bad arguments or configuration supplied by the caller."""


class DataError(RuntimeError):
    """Dataset on disk is unreadable, inconsistent, or incomplete."""


class CorruptDatasetError(DataError):
    """Payload missing, truncated, or inconsistent with the manifest."""


class FormatVersionError(DataError):
    """Manifest declares a format version this build does not read."""


class NumericalError(RuntimeError):
    """A solver produced non-finite values or otherwise broke down."""


class DivergenceError(NumericalError):
    """ADMM iterate became non-finite.

    Carries the iteration index at which the blow-up was detected.
    """

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"non-finite iterate at iteration {iteration}")
