"""Simplex frames, barycentric weights, direction cones, and search radii.

Everything here is pure and operates on plain numpy arrays, so the stencil
and scheme layers can stay vectorized while unit tests exercise the same
formulas one simplex at a time.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RayMiss, SingularSimplex

# Condition-number cap for simplex offset matrices.  Slender simplices are
# expected on anisotropic clouds and must pass; only (near-)exact degeneracy
# is rejected.
COND_CAP = 1e12

# Tolerance for "barycentric weight slightly negative due to roundoff".
BARY_TOL = -1e-9

_CONE_CONSTANTS = {2: 2.0, 3: 1.0 + 2.0 / np.sqrt(3.0)}


def cone_constant(n: int) -> float:
    """Dimension constant C_n used in the search-radius formulas (n = 2 or 3)."""
    try:
        return _CONE_CONSTANTS[n]
    except KeyError:
        raise ValueError(f"no dimension constant defined for n={n}") from None


def normalize(v: np.ndarray) -> np.ndarray:
    """Return v / ||v||, raising on a zero vector."""
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / nv


def check_unit(w: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Validate that w is a unit vector (within tol) and return it as float array."""
    w = np.asarray(w, dtype=float)
    if abs(np.linalg.norm(w) - 1.0) > tol:
        raise ValueError(f"direction must be a unit vector, got norm {np.linalg.norm(w)!r}")
    return w


@dataclass(frozen=True)
class SimplexFrame:
    """A stencil simplex anchored at a cloud point.

    Parameters
    ----------
    origin_index : int
        Index of the center point x0 in the cloud.
    vertex_indices : tuple of int
        Indices of the n simplex vertices (excluding the center).
    V : (n, n) ndarray
        Offsets x_i - x0 of the vertices, stored as columns.
    """

    origin_index: int
    vertex_indices: tuple
    V: np.ndarray

    def __post_init__(self):
        V = np.ascontiguousarray(self.V, dtype=float)
        n = V.shape[0]
        if V.shape != (n, n):
            raise ValueError(f"offset matrix must be square, got {V.shape}")
        if len(self.vertex_indices) != n:
            raise ValueError("need exactly one vertex index per offset column")
        if not np.all(np.isfinite(V)):
            raise SingularSimplex("non-finite offsets")
        if np.linalg.cond(V) > COND_CAP:
            raise SingularSimplex(
                f"simplex at point {self.origin_index} has condition number > {COND_CAP:g}"
            )
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "vertex_indices", tuple(int(i) for i in self.vertex_indices))

    @property
    def dim(self) -> int:
        return self.V.shape[0]


def barycentric_coordinates(frame: SimplexFrame, x: np.ndarray) -> np.ndarray:
    """Weights lam with V @ lam = x, for x given as an offset from the center.

    The returned vector holds the weights on the n outer vertices; the weight
    on the center itself is 1 - sum(lam).
    """
    x = np.asarray(x, dtype=float)
    try:
        return np.linalg.solve(frame.V, x)
    except np.linalg.LinAlgError as exc:  # cond check passed but solve blew up
        raise SingularSimplex(str(exc)) from exc


def _ray_hit(frame: SimplexFrame, w: np.ndarray, orientation: str):
    """Shared core of ray_parameter: returns (t, lam) for the pierced facet."""
    if orientation not in ("forward", "backward"):
        raise ValueError(f"orientation must be 'forward' or 'backward', got {orientation!r}")
    s = barycentric_coordinates(frame, w)
    denom = s.sum()
    sign = 1.0 if orientation == "forward" else -1.0
    if sign * denom <= 0.0:
        raise RayMiss(f"ray does not cross the facet plane ({orientation})")
    t = sign / denom
    lam = sign * t * s
    if np.any(lam < BARY_TOL):
        raise RayMiss(f"ray exits outside the facet, min weight {lam.min():.3e}")
    return t, lam


def ray_parameter(frame: SimplexFrame, w: np.ndarray, orientation: str = "forward") -> float:
    """Distance t > 0 at which the ray x0 + sign*t*w pierces the simplex facet.

    orientation 'forward' follows +w, 'backward' follows -w.  Raises RayMiss
    if the ray misses the facet or runs parallel to it; weights down to
    -1e-9 are accepted as boundary hits.
    """
    t, _ = _ray_hit(frame, w, orientation)
    return t


def in_cone(x0: np.ndarray, w: np.ndarray, dtheta: float, x: np.ndarray):
    """Membership test for the closed cone at x0 with axis w and opening dtheta.

    A point x belongs to the cone when <x - x0, w> / ||x - x0|| >= 1 - cos(dtheta/2).
    The center itself is not a member.  x may be a single point or an (k, n)
    array of points; the result is a bool or bool array accordingly.
    """
    x0 = np.asarray(x0, dtype=float)
    w = check_unit(w)
    x = np.asarray(x, dtype=float)
    v = x - x0
    single = v.ndim == 1
    v = np.atleast_2d(v)
    nv = np.linalg.norm(v, axis=1)
    proj = v @ w
    thresh = 1.0 - np.cos(dtheta / 2.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        inside = (proj >= thresh * nv) & (nv > 0.0)
    return bool(inside[0]) if single else inside


def search_radii(h: float, dtheta: float, n: int, narrow: bool = False):
    """Minimal and maximal search radii (r, R) for resolution h and angle dtheta.

    The default band is r, R = C_n h (cosec(dtheta/2) -+ ... ), i.e.
    C_n h (-1 + cosec(dtheta/2)) and C_n h (1 + cosec(dtheta/2)).  With
    narrow=True the tighter band h (-1 + C_n cosec(dtheta/2)),
    h (1 + C_n cosec(dtheta/2)) is returned instead, which avoids spikey
    stencils on graded clouds.
    """
    if not 0.0 < dtheta < np.pi:
        raise ValueError(f"dtheta must lie in (0, pi), got {dtheta}")
    if h <= 0.0:
        raise ValueError(f"h must be positive, got {h}")
    cn = cone_constant(n)
    csc = 1.0 / np.sin(dtheta / 2.0)
    if narrow:
        r = h * (-1.0 + cn * csc)
        R = h * (1.0 + cn * csc)
    else:
        r = cn * h * (-1.0 + csc)
        R = cn * h * (1.0 + csc)
    return r, R


@dataclass(frozen=True)
class SearchParams:
    """Resolved stencil-search parameters for one cloud.

    Usually built through from_resolution; grid pipelines construct it
    directly from the lattice geometry.
    """

    h: float
    dtheta: float
    dim: int
    r: float
    R: float
    C_n: float

    def __post_init__(self):
        if not 0.0 < self.dtheta < np.pi:
            raise ValueError(f"dtheta must lie in (0, pi), got {self.dtheta}")
        if self.h <= 0.0:
            raise ValueError("h must be positive")
        if not 0.0 <= self.r < self.R:
            raise ValueError(f"need 0 <= r < R, got r={self.r}, R={self.R}")

    @classmethod
    def from_resolution(cls, h: float, dtheta: float, dim: int, narrow: bool = True):
        """Search parameters from (h, dtheta).  The narrow band is the default here:
        it is what the stencil pipeline wants on actual clouds."""
        r, R = search_radii(h, dtheta, dim, narrow=narrow)
        return cls(h=h, dtheta=dtheta, dim=dim, r=r, R=R, C_n=cone_constant(dim))
