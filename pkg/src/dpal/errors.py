"""Exception hierarchy shared by every dpal module."""


class DpalError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(DpalError, ValueError):
    """Array shapes do not agree."""


class ParameterError(DpalError, ValueError):
    """A numeric parameter is outside its valid range."""


class LabelError(DpalError, ValueError):
    """A class label is outside [0, num_classes)."""


class FormatError(DpalError):
    """A file on disk does not follow its binary format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConsistencyError(DpalError):
    """Two inputs that must describe the same examples disagree."""


class BudgetError(DpalError):
    """The label oracle was asked for more labels than it may reveal."""


class BudgetInfeasibleError(DpalError):
    """No checkpoint fits under the requested privacy limit."""


class ContractError(DpalError):
    """An operation was called with data it must not touch or lacks."""


class ConfigError(DpalError):
    """An experiment configuration is malformed."""
