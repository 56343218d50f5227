"""Monotone directional finite differences on simplex stencils.

The upwind first derivative interpolates u on the forward facet pierced by
the ray from the center and divides by the ray length; the downwind variant
mirrors it on the backward facet.  The second directional derivative
combines both one-sided quotients.  Every operator is also available as an
explicit linear functional (SchemeWeights) so Jacobian rows can be
assembled without re-deriving the algebra.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfDomain, RayMiss
from .geometry import normalize
from .stencils import _forward_only

SNAP_TOL = 1e-12


@dataclass(frozen=True)
class SchemeSide:
    """One interpolation side: vertex ids, barycentric weights, ray length."""

    vertices: np.ndarray
    lam: np.ndarray
    t: float


@dataclass(frozen=True)
class DirectionalScheme:
    center: int
    direction: np.ndarray
    kind: str                      # first_forward | first_backward | second
    forward: SchemeSide | None
    backward: SchemeSide | None


@dataclass(frozen=True)
class SchemeWeights:
    """Sparse linear functional: coefficients on neighbors plus the center.

    The center coefficient is exactly minus the neighbor sum, so constants
    are annihilated by construction.
    """

    center: int
    neighbors: np.ndarray
    coefficients: np.ndarray
    center_coefficient: float
    kind: str


def _clean_weights(lam):
    """Clamp Farkas-tolerance negatives and snap near-indicators.

    Interpolation points that land on a stencil vertex get the exact
    one-hot weight vector so aligned directions reproduce the classical
    scheme bit-for-bit.
    """
    k = int(np.argmax(lam))
    if lam[k] >= 1.0 - SNAP_TOL:
        out = np.zeros_like(lam)
        out[k] = 1.0
        return out
    lam = np.maximum(lam, 0.0)
    return lam / lam.sum()


def _side(stencils, i, k, w, sign):
    ids, Vinv = stencils.facet_arrays(i, k)
    s = Vinv @ w
    denom = s.sum()
    if sign * denom <= 0.0:
        raise RayMiss(f"point {i}: direction runs parallel to the selected facet")
    t = sign / denom
    return SchemeSide(vertices=np.asarray(ids), lam=_clean_weights(s / denom), t=t)


def directional_scheme(stencils, i, w, kind):
    """Resolve simplex selection and interpolation weights for one operator."""
    w = normalize(w)
    if kind == "second":
        kp, km = stencils.select_pair_indices(i, w)
        return DirectionalScheme(
            center=i,
            direction=w,
            kind=kind,
            forward=_side(stencils, i, kp, w, 1.0),
            backward=_side(stencils, i, km, w, -1.0),
        )
    if kind == "first_forward":
        kp, _ = _forward_only(stencils, i, w)
        return DirectionalScheme(i, w, kind, _side(stencils, i, kp, w, 1.0), None)
    if kind == "first_backward":
        # backward facet for w is the forward facet for -w
        km, _ = _forward_only(stencils, i, -w)
        return DirectionalScheme(i, w, kind, None, _side(stencils, i, km, w, -1.0))
    raise ValueError(f"unknown scheme kind {kind!r}")


def _merge(ids_list, coef_list):
    ids = np.concatenate(ids_list)
    coefs = np.concatenate(coef_list)
    uniq, inverse = np.unique(ids, return_inverse=True)
    summed = np.zeros(len(uniq))
    np.add.at(summed, inverse, coefs)
    keep = summed != 0.0
    return uniq[keep], summed[keep]


def weights_from_scheme(scheme):
    """SchemeWeights for an already-resolved DirectionalScheme."""
    if scheme.kind == "second":
        f, b = scheme.forward, scheme.backward
        scale = 2.0 / (f.t + b.t)
        ids, coefs = _merge(
            [f.vertices, b.vertices],
            [scale * f.lam / f.t, scale * b.lam / b.t],
        )
    else:
        side = scheme.forward if scheme.kind == "first_forward" else scheme.backward
        ids, coefs = _merge([side.vertices], [side.lam / side.t])
    return SchemeWeights(
        center=scheme.center,
        neighbors=ids,
        coefficients=coefs,
        center_coefficient=-coefs.sum(),
        kind=scheme.kind,
    )


def scheme_weights(stencils, i, w, kind):
    """Linear-functional form of the directional operators."""
    return weights_from_scheme(directional_scheme(stencils, i, w, kind))


def apply_weights(weights, u):
    u = np.asarray(u, dtype=float)
    return float(
        weights.coefficients @ u[weights.neighbors]
        + weights.center_coefficient * u[weights.center]
    )


def first_derivative(u, i, w, stencils, orientation="forward"):
    """One-sided directional derivative at point i.

    forward: (L_p(x0 + t_p w) - u(x0)) / t_p; backward mirrors with -w, so
    on an affine u it returns -<b, w>.
    """
    if orientation not in ("forward", "backward"):
        raise ValueError(f"orientation must be 'forward' or 'backward', got {orientation!r}")
    kind = "first_forward" if orientation == "forward" else "first_backward"
    return apply_weights(scheme_weights(stencils, i, w, kind), u)


def second_derivative(u, i, w, stencils):
    """2 (D_w u + D_-w u) / (t_p + t_m), the monotone second difference."""
    return apply_weights(scheme_weights(stencils, i, w, "second"), u)


def lattice_directions(grid, rho):
    """Deduplicated lattice direction set within Chebyshev radius rho.

    Returns (index offsets, physical offsets); one representative per ray,
    the shortest.
    """
    from .stencils import _dedup_directions

    axes = [np.arange(-rho, rho + 1)] * grid.lattice.shape[0]
    mesh = np.meshgrid(*axes, indexing="ij")
    offs_idx = np.column_stack([m.ravel() for m in mesh])
    offs_idx = offs_idx[np.any(offs_idx != 0, axis=1)]
    phys = offs_idx @ grid.lattice.T
    sel, _ = _dedup_directions(phys)
    return offs_idx[sel], phys[sel]


def grid_direction_second_derivative(u, i, w, cloud, rho=None):
    """Centered difference along the lattice direction nearest to w.

    The baseline scheme: no interpolation, just the best-aligned stencil
    vector v_h and (u(x+v_h) - 2u(x) + u(x-v_h)) / |v_h|^2.
    """
    if cloud.grid is None:
        raise ValueError("grid_direction_second_derivative needs a lattice cloud")
    g = cloud.grid
    if rho is None:
        rho = g.rho
    u = np.asarray(u, dtype=float)
    w = normalize(w)
    offs_idx, phys = lattice_directions(g, rho)
    norms = np.linalg.norm(phys, axis=1)
    k = int(np.argmax((phys / norms[:, None]) @ w))
    shape = np.asarray(g.shape)
    idx = np.array(np.unravel_index(i, g.shape))
    for target in (idx + offs_idx[k], idx - offs_idx[k]):
        if np.any(target < 0) or np.any(target >= shape):
            raise OutOfDomain(
                f"point {i}: stencil along {offs_idx[k]} leaves the grid"
            )
    strides = np.array(
        [int(np.prod(shape[a + 1:])) for a in range(len(shape))], dtype=np.int64
    )
    flat = int(offs_idx[k] @ strides)
    return float((u[i + flat] - 2.0 * u[i] + u[i - flat]) / (norms[k] ** 2))
