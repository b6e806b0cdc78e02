"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class TwoStepError(Exception):
    """Base class; ``kind`` is the machine-readable tag printed by the CLI."""

    kind = "error"
    exit_code = 1


class DimensionError(TwoStepError, ValueError):
    kind = "dimension"


class NumericError(TwoStepError, ArithmeticError):
    kind = "numeric"


class UsageError(TwoStepError, RuntimeError):
    kind = "usage"


class ConfigError(TwoStepError, ValueError):
    kind = "config"
    exit_code = 3


class InputError(TwoStepError, ValueError):
    kind = "input"


class EvaluationError(TwoStepError, ValueError):
    kind = "evaluation"


class FormatError(TwoStepError, ValueError):
    """Malformed tensor file; ``offset`` is the byte where parsing failed."""

    kind = "format"

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class LabelAccessError(TwoStepError, PermissionError):
    """Raised when a training stage asks for target-domain ground truth."""

    kind = "label-access"
