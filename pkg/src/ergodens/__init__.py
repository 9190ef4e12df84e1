"""Barrier-function certification and density bounds for diffusions on the positive orthant."""

__version__ = "0.1.0"

from .errors import (ConfigError, DomainError, ErgodensError, NumericalBlowupError,
                     ParameterError, PrecisionError, SolverError, UnsupportedDimensionError)
from .expr import Expression, differentiate, evaluate, lambdify, parse, simplify, to_text
from .model import (CompactCube, DiffusionModel, build_affine, build_explicit,
                    build_stochvol_cascade, check_positive_definite)
from .barrier import (BarrierFunction, check_boundary_decay, make_barrier,
                      make_nested_root_barrier, make_power_exp_barrier, strengthen_barrier)
from .operators import apply_adjoint, apply_generator, adjoint_coefficients
from .certify import (Certificate, SamplingSpec, certify_outside_cube, extract_constant_C,
                      search_parameters)

__all__ = [
    "ConfigError", "DomainError", "ErgodensError", "NumericalBlowupError", "ParameterError",
    "PrecisionError", "SolverError", "UnsupportedDimensionError",
    "Expression", "differentiate", "evaluate", "lambdify", "parse", "simplify", "to_text",
    "CompactCube", "DiffusionModel", "build_affine", "build_explicit", "build_stochvol_cascade",
    "check_positive_definite",
    "BarrierFunction", "check_boundary_decay", "make_barrier", "make_nested_root_barrier",
    "make_power_exp_barrier", "strengthen_barrier",
    "apply_adjoint", "apply_generator", "adjoint_coefficients",
    "Certificate", "SamplingSpec", "certify_outside_cube", "extract_constant_C",
    "search_parameters",
]
