"""Exception types raised across the pipeline."""


class NiromError(Exception):
    """Base class for pipeline errors."""


class InvalidModelError(NiromError, ValueError):
    pass


class NumericInputError(NiromError, ValueError):
    pass


class DomainError(NiromError, ValueError):
    pass


class ShapeError(NiromError, ValueError):
    pass


class UsageError(NiromError, ValueError):
    pass


class DivisionGuardError(NiromError, ZeroDivisionError):
    pass


class StiffnessError(NiromError, FloatingPointError):
    """Reference integration blew up; ``step`` is the offending outer step."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class RolloutError(NiromError, FloatingPointError):
    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class TrainingDivergence(NiromError, FloatingPointError):
    """Loss became non-finite. ``checkpoint`` holds the last finite network."""

    def __init__(self, message, epoch, checkpoint=None, history=None):
        super().__init__(message)
        self.epoch = epoch
        self.checkpoint = checkpoint
        self.history = history if history is not None else []


class ConfigError(NiromError, ValueError):
    pass


class ProvenanceError(NiromError):
    pass


class MissingInputError(NiromError, FileNotFoundError):
    pass
