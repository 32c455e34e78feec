"""Exception taxonomy shared by all voxmamba modules."""


class VoxmambaError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(VoxmambaError, ValueError):
    """Operand dimensions are incompatible (matmul, broadcast, conv, ...)."""


class ContractError(VoxmambaError, ValueError):
    """An API precondition was violated (non-scalar loss, bad permutation, ...)."""


class NumericError(VoxmambaError, ArithmeticError):
    """A forward computation produced NaN/Inf on finite inputs."""


class DiscretizationError(NumericError):
    """Zero-order hold is singular: a diagonal entry of A is zero."""


class DivergenceError(NumericError):
    """Training loss became non-finite; carries the offending step index."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class ConfigError(VoxmambaError, ValueError):
    """A configuration object violates one of its invariants."""


class FormatError(VoxmambaError, ValueError):
    """A binary file does not conform to the documented format."""
