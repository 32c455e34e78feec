"""voxmamba: selective state-space layers and Mamba-augmented 3D U-Nets."""

from .errors import (ConfigError, ContractError, DiscretizationError,
                     DivergenceError, FormatError, NumericError, ShapeError,
                     VoxmambaError)
from .tensor import Tensor, concat, elementwise, layer_norm, no_grad

__all__ = [
    "Tensor", "concat", "elementwise", "layer_norm", "no_grad",
    "VoxmambaError", "ShapeError", "ContractError", "NumericError",
    "DiscretizationError", "DivergenceError", "ConfigError", "FormatError",
]

__version__ = "0.1.0"
