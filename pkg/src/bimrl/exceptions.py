"""Exception types shared across the package."""


class BIMRLError(Exception):
    """Base class for all package errors."""


class ParameterError(BIMRLError, ValueError):
    """Invalid generator or model parameter. ``field`` names the offender."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ProtocolError(BIMRLError, RuntimeError):
    """Environment or memory used out of order."""


class ContractError(BIMRLError, ValueError):
    """Inputs violate an operation's precondition."""


class ShapeError(ContractError):
    """Tensor shapes do not line up."""


class ConfigError(BIMRLError, ValueError):
    """Invalid experiment configuration."""


class StaleBatchError(ContractError):
    """Rollout batch does not belong to the current policy."""


class NonFiniteLossError(BIMRLError, FloatingPointError):
    """Training produced a NaN/inf loss."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
