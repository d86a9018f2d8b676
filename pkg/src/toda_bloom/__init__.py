"""Blow-up solutions of the SU(n+1) Toda system on symmetric planar domains.

Submodules: ``geometry`` (domains, Green's function), ``profiles`` (bubbles,
cascade, ansatz), ``mesh`` (discretizations, quadrature), ``linops``
(linearized operator, kernel checks), ``solver`` (Newton, continuation,
fixed point), ``diagnostics`` (scaling studies) and ``cli``.
"""

from .errors import (
    CascadeOverflowError,
    ConditioningError,
    DivergenceError,
    DomainError,
    PreconditionError,
    ResourceError,
    StagnationError,
    TodaError,
)
from .geometry import Domain, disk_green, regular_part_at_zero, check_k_symmetry
from .profiles import ParameterCascade, Bubble, alpha_cascade, delta_cascade, ansatz, theta, annuli
from .mesh import build_log_radial_mesh, build_sector_mesh, quad_radial, lp_norm
from .solver import SolveReport, solve_from_ansatz, continuation, fixed_point_iterate

__version__ = "0.1.0"
