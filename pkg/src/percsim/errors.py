"""Exception hierarchy shared by all subsystems."""


class PercsimError(Exception):
    """Base class; every error raised deliberately by the package derives from it."""

    code = "error"

    def to_json(self):
        return {"error": self.code, "type": type(self).__name__, "message": str(self)}


class DimensionError(PercsimError, ValueError):
    code = "dimension"


class NumericError(PercsimError, ValueError):
    code = "numeric"


class InputTooSmallError(PercsimError, ValueError):
    code = "input_too_small"


class ParameterError(PercsimError, ValueError):
    code = "parameter"


class DomainError(PercsimError, ValueError):
    code = "domain"


class DecodeError(PercsimError):
    """Corrupt or mismatched bitstream."""

    code = "decode"


class ConfigError(PercsimError, ValueError):
    code = "config"


class PreconditionError(PercsimError, ValueError):
    code = "precondition"


class FitError(PercsimError, ValueError):
    code = "fit"


class TrainingAbort(PercsimError, RuntimeError):
    """Raised when a loss term turns non-finite; ``part`` names the offender."""

    code = "training_abort"

    def __init__(self, message, part=None, trace=None):
        super().__init__(message)
        self.part = part
        self.trace = trace


class PartialResultError(PercsimError):
    code = "partial_result"

    def __init__(self, message, item=None, partial=None):
        super().__init__(message)
        self.item = item
        self.partial = partial


class ManifestError(PercsimError, ValueError):
    code = "manifest"


class LabelRangeError(PercsimError, IndexError):
    code = "label_range"
