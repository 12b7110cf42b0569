"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class CsvFormatError(ValidationError):
    """Malformed spectrum CSV; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmptyDistributionError(ValidationError):
    """Sampling was requested from an all-zero spectrum."""


class TrainingDivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient; carries the epoch index when known."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch
