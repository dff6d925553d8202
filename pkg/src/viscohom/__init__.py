"""Homogenization of viscoelastic fluid-solid composites with fading memory.

The package computes effective (homogenized) models from a reference cell,
solves the homogenized and the fine-scale evolution problems, and measures
how far apart they are as the microstructure scale ``eps`` shrinks.
"""

from .ap_core import (
    PoreDistribution,
    TrigPolynomial,
    besicovitch_seminorm,
    detect_period,
    mean_value,
    torus_convolve,
    window_average,
)
from .coefficients import CoefficientField
from .config import SimConfig, load_config, parse_config, serialize_config
from .errors import (
    CoercivityViolation,
    ConfigError,
    EpsilonNotConforming,
    GeometryViolation,
    HistoryError,
    InvalidOrder,
    NoPeriodInWindow,
    PhaseError,
    ShapeError,
    SolverDiverged,
    ViscohomError,
)
from .fine import assemble_fine_operators, energy_report, solve_fine
from .geometry import CellGeometry, build_cell, build_epsilon_domain, mesh_cell, volume_fractions
from .harness import ConvergenceRecord, run_cell, run_convergence, run_effective, run_fine, run_macro
from .homogenizer import EffectiveModel, assemble_effective, solve_elastic_cell, solve_stokes_cell
from .loads import LoadField
from .macro import macro_mesh, solve_macro
from .memory import FieldHistory, MemoryKernel, volterra_convolve

__version__ = "0.1.0"

__all__ = [
    "CellGeometry",
    "CoefficientField",
    "CoercivityViolation",
    "ConfigError",
    "ConvergenceRecord",
    "EffectiveModel",
    "EpsilonNotConforming",
    "FieldHistory",
    "GeometryViolation",
    "HistoryError",
    "InvalidOrder",
    "LoadField",
    "MemoryKernel",
    "NoPeriodInWindow",
    "PhaseError",
    "PoreDistribution",
    "ShapeError",
    "SimConfig",
    "SolverDiverged",
    "TrigPolynomial",
    "ViscohomError",
    "assemble_effective",
    "assemble_fine_operators",
    "besicovitch_seminorm",
    "build_cell",
    "build_epsilon_domain",
    "detect_period",
    "energy_report",
    "load_config",
    "macro_mesh",
    "mean_value",
    "mesh_cell",
    "parse_config",
    "run_cell",
    "run_convergence",
    "run_effective",
    "run_fine",
    "run_macro",
    "serialize_config",
    "solve_elastic_cell",
    "solve_fine",
    "solve_macro",
    "solve_stokes_cell",
    "torus_convolve",
    "volterra_convolve",
    "volume_fractions",
    "window_average",
]
