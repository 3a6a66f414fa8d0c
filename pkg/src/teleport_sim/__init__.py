"""Exact simulation of beam-splitting teleportation on the Boson Fock space."""

from .fock import (
    DensityOperator,
    FockVector,
    NullVectorError,
    OrthonormalFrame,
    SupportError,
)
from .hilbert import Splitting, half_half_splitting, projection_splitting, validate_splitting
from .teleport import (
    ImpossibleOutcome,
    ModelError,
    QuditState,
    TeleportModel,
    build_model,
    closed_forms,
    dft_b_matrix,
    end_to_end,
)

__version__ = "0.1.0"

__all__ = [
    "DensityOperator",
    "FockVector",
    "ImpossibleOutcome",
    "ModelError",
    "NullVectorError",
    "OrthonormalFrame",
    "QuditState",
    "Splitting",
    "SupportError",
    "TeleportModel",
    "build_model",
    "closed_forms",
    "dft_b_matrix",
    "end_to_end",
    "half_half_splitting",
    "projection_splitting",
    "validate_splitting",
]
