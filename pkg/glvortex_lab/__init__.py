"""
glvortex_lab - numerical lab for Ginzburg-Landau vortex energies, obstacle
problems and constrained vortex minimizers.
"""

__version__ = "0.1.0"

from .errors import ConfigurationError, DomainError, GLVortexError, NumericError, PreconditionError
from .geometry import DomainSpec, Grid, build_grid
from .renorm import ParamRegime, VortexConfig
from .lab import RunManifest, VortexLab

__all__ = [
    "ConfigurationError",
    "DomainError",
    "DomainSpec",
    "GLVortexError",
    "Grid",
    "NumericError",
    "ParamRegime",
    "PreconditionError",
    "RunManifest",
    "VortexConfig",
    "VortexLab",
    "build_grid",
]
