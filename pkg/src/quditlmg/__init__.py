"""Driven-dissipative Lipkin-Meshkov-Glick model for d-level particles."""

from .errors import (CapacityError, ConditionViolation, ConvergenceError, NonUniqueSteadyState,
                     QuditLMGError, StiffnessError, SymmetryViolationError)
from .spin_core import (DissipatorKind, DissipatorSpec, ModelParams, SpinQuantum,
                        make_dissipator, single_particle_matrices)

__version__ = "0.1.0"
