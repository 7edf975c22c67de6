"""Diabolic points and magnetization lifetimes of anisotropic spin chains."""

from .constants import K_B, MU_B
from .diabolic import DiabolicPoint, dp_atlas, find_dps, ground_state_quanta, single_atom_dp, sx_quanta
from .errors import (
    ConfigError,
    DataError,
    DetectionError,
    DiaboloError,
    DomainError,
    InsufficientDataError,
    NumericalError,
)
from .geometry import FieldConfig, lab_to_crystal, rotation_matrix, total_site_fields
from .rates import (
    LifetimePrediction,
    TransportParams,
    build_rate_matrix,
    current_decomposition_fit,
    lifetime_curve,
    lifetime_point,
    steady_state,
)
from .spinmodel import ChainSpec, SiteParams, build_hamiltonian, diagonalize, solve_chain

__version__ = "0.1.0"

__all__ = [
    "K_B", "MU_B",
    "ChainSpec", "SiteParams", "build_hamiltonian", "diagonalize", "solve_chain",
    "FieldConfig", "lab_to_crystal", "rotation_matrix", "total_site_fields",
    "DiabolicPoint", "find_dps", "dp_atlas", "single_atom_dp", "sx_quanta", "ground_state_quanta",
    "TransportParams", "LifetimePrediction", "build_rate_matrix", "steady_state",
    "lifetime_point", "lifetime_curve", "current_decomposition_fit",
    "DiaboloError", "ConfigError", "NumericalError", "DomainError", "DataError",
    "DetectionError", "InsufficientDataError",
]
