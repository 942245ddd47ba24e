"""Structured sparse SVMs on grid-based functional connectomes."""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .connectome import (
    AugmentationMap,
    GridParcellation,
    adjoint_augment,
    apply_difference,
    apply_difference_adjoint,
    augment,
    build_augmentation,
    matricize,
    neighborhood,
    neighborhood_penalty,
    spatial_penalty,
    vectorize_connectome,
)
from .exceptions import (
    DomainError,
    NumericalConsistencyError,
    NumericalDivergenceError,
    SSVMError,
    StructuralError,
)
from .prox import LossKind, loss_prox, loss_value, soft_threshold
from .solver import (
    Model,
    SolverConfig,
    TrainingSet,
    decision_value,
    fit,
    fit_elasticnet,
    fit_structured,
    objective,
    precompute_h,
    predict,
)
from .spectral import SpectralKernel, build_kernel, solve_laplacian
from .simulate import SimulationParams, generate_dataset, reference_slice
from .evaluation import (
    GridResult,
    GridSpec,
    accuracy,
    grid_search,
    kfold_split,
    median_weight,
    node_degree,
    roc_edge_recovery,
)

__all__ = [
    "BACKEND",
    "AugmentationMap", "GridParcellation", "adjoint_augment", "apply_difference",
    "apply_difference_adjoint", "augment", "build_augmentation", "matricize", "neighborhood",
    "neighborhood_penalty", "spatial_penalty", "vectorize_connectome",
    "DomainError", "NumericalConsistencyError", "NumericalDivergenceError", "SSVMError",
    "StructuralError",
    "LossKind", "loss_prox", "loss_value", "soft_threshold",
    "Model", "SolverConfig", "TrainingSet", "decision_value", "fit", "fit_elasticnet",
    "fit_structured", "objective", "precompute_h", "predict",
    "SpectralKernel", "build_kernel", "solve_laplacian",
    "SimulationParams", "generate_dataset", "reference_slice",
    "GridResult", "GridSpec", "accuracy", "grid_search", "kfold_split", "median_weight",
    "node_degree", "roc_edge_recovery",
]
