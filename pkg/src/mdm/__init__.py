"""Multivariate decomposition method for integrals in infinitely many variables."""

from mdm._kernels import BACKEND
from mdm.decomposition import (
    AnchoredPoint,
    CardinalityError,
    CostModel,
    DecompositionError,
    Domain,
    DomainError,
    EvaluationError,
    Subset,
    Tally,
    decomposition_term,
    evaluate_anchored,
    from_scalar,
    reconstruct,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AnchoredPoint",
    "CardinalityError",
    "CostModel",
    "DecompositionError",
    "Domain",
    "DomainError",
    "EvaluationError",
    "Subset",
    "Tally",
    "decomposition_term",
    "evaluate_anchored",
    "from_scalar",
    "reconstruct",
]
