"""Exception hierarchy shared across the package."""


class GraphDDoSError(Exception):
    """Base class for all package errors."""


class DimensionError(GraphDDoSError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigurationError(GraphDDoSError, ValueError):
    """A parameter or config value is outside its valid range."""


class DataError(GraphDDoSError, ValueError):
    """Input data violates a contract (unknown label, bad row, ...)."""


class SchemaError(DataError):
    """A source file does not match the declared feature schema."""


class NotFoundError(GraphDDoSError, KeyError):
    """A referenced flow, alert, or record does not exist."""


class ConsistencyError(GraphDDoSError, RuntimeError):
    """Internal invariant violated (e.g. corrupted pooling indices)."""


class CheckInvalidError(GraphDDoSError, RuntimeError):
    """A verification harness could not run (non-deterministic forward)."""


class DivergenceError(GraphDDoSError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int, lr: float):
        super().__init__(f"{message} (epoch={epoch}, lr={lr})")
        self.epoch = epoch
        self.lr = lr


class StartupError(ConfigurationError):
    """A service could not start (checkpoint/schema mismatch, bad state dir)."""
