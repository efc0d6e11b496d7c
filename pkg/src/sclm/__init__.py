"""Stochastic scalar conservation laws on compact manifolds, desk scale."""

__version__ = "0.1.0"

from .errors import BlowupError, ConfigError
from .flux import (
    FluxField,
    NoiseAmplitude,
    builtin_flux,
    builtin_noise,
    check_geometry_compatibility,
    check_noise_assumptions,
)
from .function_space import SpectralField
from .geometry import (
    ChartedManifold,
    EigenBasis,
    QuadratureGrid,
    build_eigenbasis,
    build_manifold,
    divergence,
    gradient,
    laplace_beltrami,
)
from .kinetic import (
    XiGrid,
    contraction_experiment,
    entropy_defect,
    estimate_kinetic_measure,
    kinetic_function,
    pair_count_distance,
)
from .solver import SolverConfig, SolutionPath, energy_report, run_path
from .stochastic import (
    TimeGrid,
    WienerPath,
    ito_integral,
    product_rule_residual,
    sample_wiener,
    verify_ito_isometry,
)

__all__ = [
    "BlowupError",
    "ChartedManifold",
    "ConfigError",
    "EigenBasis",
    "FluxField",
    "NoiseAmplitude",
    "QuadratureGrid",
    "SolutionPath",
    "SolverConfig",
    "SpectralField",
    "TimeGrid",
    "WienerPath",
    "XiGrid",
    "build_eigenbasis",
    "build_manifold",
    "builtin_flux",
    "builtin_noise",
    "check_geometry_compatibility",
    "check_noise_assumptions",
    "contraction_experiment",
    "divergence",
    "energy_report",
    "entropy_defect",
    "estimate_kinetic_measure",
    "gradient",
    "ito_integral",
    "kinetic_function",
    "laplace_beltrami",
    "pair_count_distance",
    "product_rule_residual",
    "run_path",
    "sample_wiener",
    "verify_ito_isometry",
    "__version__",
]
