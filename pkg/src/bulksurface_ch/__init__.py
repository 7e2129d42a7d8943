"""Finite element laboratory for the bulk-surface convective Cahn-Hilliard system with dynamic boundary conditions."""
from .assembly import FeOperators, VelocitySample, assemble_operators, builtin_velocity, convection_load
from .diagnostics import DiagnosticsRecord, chain_rule_check, mass_drift, record
from .elliptic import dual_norm, poincare_constant, solve_S
from .errors import (AssemblyError, BulkSurfaceError, ConfigurationError, DomainError, ModelError, SolverError,
                     StepError)
from .experiments import (Setup, continuous_dependence, fit_rate, limit_sweep, reference_initial_data,
                          reference_setup)
from .geometry import BulkSurfaceMesh, generate_mesh
from .model import (CouplingParams, Mobilities, Potentials, State, TriState, builtin_potential, energy, h_of,
                    mass)
from .stepper import StepConfig, Trajectory, project_initial, simulate, step

__version__ = "0.1.0"
