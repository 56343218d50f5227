"""Exception types shared across the package."""


class CloudFdError(Exception):
    """Base class for all cloudfd errors."""


class SingularSimplex(CloudFdError):
    """Simplex offset matrix is singular or too ill-conditioned to invert."""


class RayMiss(CloudFdError):
    """Ray from the stencil center does not pass through the simplex."""


class EmptyNeighborhood(CloudFdError):
    """No admissible neighbors found for a point during stencil construction."""

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"point {index}: no admissible neighbors")


class HullDegenerate(CloudFdError):
    """Neighbor directions of a point do not span a full-dimensional hull."""

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"point {index}: degenerate direction hull")


class NoForwardSimplex(CloudFdError):
    """No stencil simplex lies in the forward cone of the requested direction."""


class NoBackwardSimplex(CloudFdError):
    """No stencil simplex lies in the backward cone of the requested direction."""


class NotAntipodal(CloudFdError):
    """Simplex pair does not admit a common interior direction."""


class OutOfDomain(CloudFdError):
    """Requested stencil reaches outside the discretized domain."""


class ParseError(CloudFdError):
    """Malformed mesh file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TopologyError(CloudFdError):
    """Mesh connectivity is inconsistent with its point set."""


class NonConverged(CloudFdError):
    """Iteration ended without meeting the requested tolerance."""

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class LinearSolveFailure(CloudFdError):
    """Sparse linear solve failed or returned non-finite values."""
