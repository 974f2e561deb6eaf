"""Pose-and-mesh co-evolution on a small float64 reverse-mode autodiff."""

from .autodiff import NonFiniteError, Tensor, backward, grad_check, no_grad
from .body import BodyConfig, BodyModel, build_body
from .config import TrainConfig, load_config, preset
from .model import PMCE, Prediction

__version__ = "0.1.0"

__all__ = [
    "BodyConfig", "BodyModel", "NonFiniteError", "PMCE", "Prediction", "Tensor", "TrainConfig",
    "backward", "build_body", "grad_check", "load_config", "no_grad", "preset",
]
