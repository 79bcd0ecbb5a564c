"""
hiv-delay-control: optimal reverse-transcriptase-inhibitor treatment for a
delayed HIV-1 infection model with CTL immune response.

The package integrates the state- and control-delayed model, classifies its
equilibria, and computes bang-bang treatment schedules with an adjoint-based
check of the minimum principle.
"""

__version__ = "1.0.0"

from .dde_integrator import BangBang, GridControl, Trajectory, integrate, uncontrolled
from .errors import (
    ConfigError,
    EquilibriumAbsent,
    GridMismatch,
    HivDelayError,
    NoBracket,
    NonFiniteState,
    NotConverged,
    OutOfRange,
    StepIncompatible,
)
from .model_core import EquilibriumSet, InitialData, ModelParams, State, equilibria, reproduction_numbers
from .optimal_control import (
    Optimum,
    PmpReport,
    SensitivityTable,
    integrate_adjoint,
    sensitivities,
    solve_grid,
    solve_iop,
    switching_function,
    verify_pmp,
)
from .stability import StabilityReport, Verdict, Which, classify

__all__ = [
    "BangBang",
    "ConfigError",
    "EquilibriumAbsent",
    "EquilibriumSet",
    "GridControl",
    "GridMismatch",
    "HivDelayError",
    "InitialData",
    "ModelParams",
    "NoBracket",
    "NonFiniteState",
    "NotConverged",
    "Optimum",
    "OutOfRange",
    "PmpReport",
    "SensitivityTable",
    "StabilityReport",
    "State",
    "StepIncompatible",
    "Trajectory",
    "Verdict",
    "Which",
    "classify",
    "equilibria",
    "integrate",
    "integrate_adjoint",
    "reproduction_numbers",
    "sensitivities",
    "solve_grid",
    "solve_iop",
    "switching_function",
    "uncontrolled",
    "verify_pmp",
]
