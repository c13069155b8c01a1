"""Exception hierarchy shared by every module of the package."""


class GeosbiError(Exception):
    """Base class for all package errors."""


class ContractError(GeosbiError, ValueError):
    """Inputs violate a documented shape or type contract."""


class InvalidPointError(GeosbiError, ValueError):
    """A point lies off the manifold beyond tolerance."""


class ConfigurationError(GeosbiError, ValueError):
    """A configuration value is missing or out of range."""


class InitializationError(GeosbiError, RuntimeError):
    """A sampler or optimizer was started from an unusable state."""


class TrainingDivergedError(GeosbiError, RuntimeError):
    def __init__(self, epoch, batch, loss):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class ConvergenceError(GeosbiError, RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class SceneParseError(GeosbiError, ValueError):
    def __init__(self, message, line=None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


class StageError(GeosbiError, RuntimeError):
    """Failure inside a named pipeline stage; ``stage`` tags where it happened."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
