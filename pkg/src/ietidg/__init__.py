"""Tearing/interconnecting solver for dG-coupled multi-patch spline problems."""

from .bspline import (
    KnotVector,
    QuadratureRule,
    TensorSplineSpace,
    active_on_interval,
    eval_basis,
    gauss_rule,
    greville_points,
    nonzero_at_point,
    refine_uniform,
)
from .domains import builtin_domain, grid_domain, slider_domain, t_domain
from .errors import ConfigError, NumericalError, SingularMatrixError
from .geometry import GeometryMap, Interface, MultiPatchDomain, Patch, Vertex
from .ieti import (
    IetiOperator,
    SolveReport,
    select_primal,
    setup_operator,
    solve_ieti,
)
from .refsolver import assemble_global, direct_solve, measure_error

__all__ = [
    "KnotVector", "QuadratureRule", "TensorSplineSpace",
    "active_on_interval", "eval_basis", "gauss_rule", "greville_points",
    "nonzero_at_point", "refine_uniform",
    "builtin_domain", "grid_domain", "slider_domain", "t_domain",
    "ConfigError", "NumericalError", "SingularMatrixError",
    "GeometryMap", "Interface", "MultiPatchDomain", "Patch", "Vertex",
    "IetiOperator", "SolveReport", "select_primal", "setup_operator", "solve_ieti",
    "assemble_global", "direct_solve", "measure_error",
]

__version__ = "0.1.0"
