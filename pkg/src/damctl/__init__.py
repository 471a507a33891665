"""Optimal turbine and spillway control of a dam under clustered storms.

Subpackages: :mod:`damctl.model` (physics and parameters),
:mod:`damctl.hawkes` (self-exciting storm arrivals), :mod:`damctl.solver`
(lattice fixed point and policies), :mod:`damctl.trajectory` (exact path
simulation), :mod:`damctl.analysis` (Monte Carlo cross-checks and the
excitation sweep), :mod:`damctl.io` and :mod:`damctl.cli` (persistence and
command line).
"""

from .model import (
    ConfigError,
    MarkDistribution,
    ModelConfig,
    Regime,
    SupercriticalWarning,
    default_config,
)
from .solver import Grid, PolicyField, SolveResult, SolverError, ValueField, solve

__all__ = [
    "ConfigError",
    "MarkDistribution",
    "ModelConfig",
    "Regime",
    "SupercriticalWarning",
    "default_config",
    "Grid",
    "PolicyField",
    "SolveResult",
    "SolverError",
    "ValueField",
    "solve",
]

__version__ = "0.1.0"
