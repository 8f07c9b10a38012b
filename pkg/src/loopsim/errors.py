"""Exception hierarchy shared across the simulator."""


class LoopsimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(LoopsimError):
    """Invalid configuration value or unusable config/flag combination."""


class DataError(LoopsimError):
    """A dataset could not be read, parsed, or used."""


class ParseError(DataError):
    """Malformed row in an interactions or scores file."""

    def __init__(self, path, line_no: int, message: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class EmptyDatasetError(DataError):
    """Dataset is empty after filtering."""


class InfeasibleSpecError(ConfigError):
    """A synthetic-generator spec cannot produce a valid dataset."""


class UnknownUserError(LoopsimError):
    """A personalized model was asked to score a user it was not fit on."""


class InvariantViolationError(LoopsimError):
    """An internal invariant was broken (signals a bug, not bad input)."""


class NoAcceptableItemError(LoopsimError):
    """The recommendation list was empty, so no item could be accepted."""


class UndefinedProportionError(LoopsimError):
    """Country proportions were requested for an empty item list."""


class UndefinedDeltaError(LoopsimError):
    """Relative delta was requested against a non-positive baseline."""


class TrainingDivergedError(LoopsimError):
    """Model training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        detail = f" ({message})" if message else ""
        super().__init__(f"training diverged at epoch {epoch}{detail}")
