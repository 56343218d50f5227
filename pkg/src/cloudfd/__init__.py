"""Monotone finite differences on point clouds and grids."""

from .errors import CloudFdError, NonConverged
from .eigen import (
    DirectionFan,
    default_fan,
    max_eigenvalue,
    min_eigenvalue,
    sampled_eigenvalue,
)
from .fd import first_derivative, scheme_weights, second_derivative
from .geometry import SearchParams, cone_constant, search_radii
from .meshes import (
    PointCloud,
    augment_boundary,
    build_regular_grid,
    read_mesh,
    rotate_cloud,
    write_mesh,
)
from .pde import (
    EllipticProblem,
    GridFunction,
    convex_envelope_oracle,
    convex_envelope_residual,
    double_cone,
    pucci_exact,
    pucci_residual,
    segment_distance,
)
from .solvers import (
    SolverConfig,
    SolverReport,
    combination_solve,
    euler_solve,
    newton_solve,
)
from .stencils import ResolutionReport, preprocess_cloud, validate_resolution

__version__ = "0.1.0"

__all__ = [
    "CloudFdError",
    "DirectionFan",
    "EllipticProblem",
    "GridFunction",
    "NonConverged",
    "PointCloud",
    "ResolutionReport",
    "SearchParams",
    "SolverConfig",
    "SolverReport",
    "augment_boundary",
    "build_regular_grid",
    "combination_solve",
    "cone_constant",
    "convex_envelope_oracle",
    "convex_envelope_residual",
    "default_fan",
    "double_cone",
    "euler_solve",
    "first_derivative",
    "max_eigenvalue",
    "min_eigenvalue",
    "newton_solve",
    "preprocess_cloud",
    "pucci_exact",
    "pucci_residual",
    "read_mesh",
    "rotate_cloud",
    "sampled_eigenvalue",
    "scheme_weights",
    "search_radii",
    "second_derivative",
    "segment_distance",
    "validate_resolution",
    "write_mesh",
    "__version__",
]
