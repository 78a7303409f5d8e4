"""Mixed finite-element solver and optimization suite for pointwise-tracking
optimal control of the stationary Navier-Stokes equations with box constraints."""

from .adjoint import AdjointSolution, TrackingData, solve_adjoint
from .elements import ElementPair, FeFunction, MixedSpace, build_space, evaluate_fe, interpolate
from .errors import (ConfigError, DiagnosticError, InputError, NonlinearSolveError, NSTrackError,
                     OptError, OutOfDomainError, SolverError)
from .mesh import Mesh, build_structured, locate_point, refine_uniform
from .optimize import (ControlProblem, OptimizationResult, ReducedProblem, Scheme, Strategy, cost,
                       optimize, project_box, project_l2_piecewise_constant, reduced_gradient,
                       second_order_value)
from .state import NewtonReport, StateSolution, solve_linearized, solve_state

__all__ = [
    "AdjointSolution", "ConfigError", "ControlProblem", "DiagnosticError", "ElementPair",
    "FeFunction", "InputError", "Mesh", "MixedSpace", "NSTrackError", "NewtonReport",
    "NonlinearSolveError", "OptError", "OptimizationResult", "OutOfDomainError",
    "ReducedProblem", "Scheme", "SolverError", "StateSolution", "Strategy", "TrackingData",
    "build_space", "build_structured", "cost", "evaluate_fe", "interpolate", "locate_point",
    "optimize", "project_box", "project_l2_piecewise_constant", "reduced_gradient",
    "refine_uniform", "second_order_value", "solve_adjoint", "solve_linearized", "solve_state",
]
