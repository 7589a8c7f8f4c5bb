"""Exception types shared across the package."""


class DalbtError(Exception):
    pass


class FormatError(DalbtError, ValueError):
    """A binary file does not follow its declared layout."""


class ConsistencyError(DalbtError, ValueError):
    """Ids, counts or pool membership disagree."""


class ConfigurationError(DalbtError, ValueError):
    pass


class DegenerateInputError(DalbtError, ValueError):
    pass


class NumericError(DalbtError, ArithmeticError):
    pass


class UsageError(DalbtError, RuntimeError):
    pass


class DegenerateFitError(DalbtError, ValueError):
    """The Weibull tail has no spread; the caller should fall back."""


class StrategyUnavailableError(DalbtError, RuntimeError):
    pass


class TrainingDivergedError(NumericError):
    def __init__(self, epoch: int, batch: int, term: str, value: float):
        self.epoch, self.batch, self.term, self.value = epoch, batch, term, value
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch}: {term}={value!r}"
        )
