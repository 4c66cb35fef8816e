"""Generator training, Bayesian conditioning with an inference network, and assessment."""
from .autodiff import Tensor, backward, no_grad, tensor
from .errors import (ConfigError, DomainError, FormatError, GeocondError, ShapeError,
                     TrainingDivergedError, UsageError)

__all__ = [
    "Tensor", "backward", "no_grad", "tensor",
    "ConfigError", "DomainError", "FormatError", "GeocondError", "ShapeError",
    "TrainingDivergedError", "UsageError",
]
