"""Exception hierarchy shared by every stage of the pipeline."""


class LorenzCuspError(Exception):
    """Base class for all package errors."""


class InvalidInputError(LorenzCuspError, ValueError):
    pass


class InvalidParameterError(LorenzCuspError, ValueError):
    pass


class PreconditionError(LorenzCuspError, ValueError):
    pass


class DomainError(LorenzCuspError, ValueError):
    pass


class NumericError(LorenzCuspError, RuntimeError):
    """A numerical procedure failed (maps to CLI exit code 4)."""


class StiffnessError(NumericError):
    pass


class DivergenceError(NumericError):
    pass


class EmptySectionError(NumericError):
    pass


class AmbiguousLobeError(LorenzCuspError, ValueError):
    pass


class DegenerateRangeError(NumericError):
    pass


class FitError(NumericError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class LatticeError(NumericError):
    pass


class DepthError(NumericError):
    pass


class PartitionError(NumericError):
    pass


class NonReturningError(NumericError):
    pass


class CodingAbortError(NumericError):
    pass


class TruncationError(NumericError):
    pass


class ConvergenceError(NumericError):
    pass


class WindowError(NumericError):
    pass


class GridError(LorenzCuspError, ValueError):
    pass


class PipelineError(NumericError):
    def __init__(self, stage, cause):
        super().__init__(f"pipeline failed at stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


class ConfigError(LorenzCuspError, ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class DependencyError(LorenzCuspError):
    def __init__(self, missing, command):
        super().__init__(f"missing upstream artifact {missing}; run '{command}' first")
        self.missing = missing
        self.command = command
