"""Extremal Hessian eigenvalue approximations over antipodal simplex pairs.

The curvature along a direction w is the monotone second difference from
module fd.  Sweeping w over the overlap cone of a forward/backward facet
pair and maximizing gives the pair value; the maximum over all overlapping
pairs approximates the largest eigenvalue, the minimum the smallest.

Both interpolation points stay on one line through the center while w
sweeps, so affine functions score exactly zero for every pair.  On pairs
that are exact negations of each other the objective is a rational
function of the chord parameter and the maximizer is a root of a
quadratic; general pairs fall back to a bracketed golden-section (2-D) or
projected coordinate ascent (3-D).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotAntipodal
from .fd import second_derivative
from .stencils import FARKAS_TOL, GridStencilSet

ASCENT_RESTARTS = 8
ASCENT_TOL = 1e-10
ASCENT_MAXIT = 200
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


# --- facet access -----------------------------------------------------------


def _facet_data(stencils, i):
    """(V, Vinv, vertex ids, antipode-or-None) arrays for point i."""
    if isinstance(stencils, GridStencilSet):
        t = stencils.table_for(i)
        return t.V, t.Vinv, i + t.flat_shifts, t.antipode
    pk = stencils.pack
    lo, hi = pk.row_start[i], pk.row_start[i + 1]
    return pk.V[lo:hi], pk.Vinv[lo:hi], pk.vertices[lo:hi], None


def _negation_perm(V_p, V_m, tol):
    """Column permutation with V_m[:, perm[k]] == -V_p[:, k], else None."""
    n = V_p.shape[1]
    perm = np.full(n, -1, dtype=int)
    for k in range(n):
        d = np.linalg.norm(V_m + V_p[:, k][:, None], axis=0)
        j = int(np.argmin(d))
        if d[j] > tol or j in perm[:k]:
            return None
        perm[k] = j
    return perm


# --- chord windows (2-D) ----------------------------------------------------


def _chord_window(qa, qb, Vinv_m):
    """Feasible [lo, hi] on the chord qa + theta (qb - qa), or None.

    Feasible means -w(theta) lies in the backward facet's cone with a
    strictly crossing ray (finite t_m).
    """
    base = Vinv_m @ qa
    slope = Vinv_m @ (qb - qa)
    mag = max(1.0, np.abs(base).max(), np.abs(base + slope).max())
    tol = FARKAS_TOL * mag
    lo, hi = 0.0, 1.0
    cons = [(base[r], slope[r], tol) for r in range(len(base))]
    cons.append((base.sum(), slope.sum(), -1e-12 * mag))
    for b0, sl, ub in cons:
        if abs(sl) < 1e-300:
            if b0 > ub:
                return None
        elif sl > 0:
            hi = min(hi, (ub - b0) / sl)
        else:
            lo = max(lo, (ub - b0) / sl)
    if lo > hi + 1e-12:
        return None
    return max(lo, 0.0), min(hi, 1.0)


def _chord_objective(theta, qa, qb, u_a, u_b, u0, Vinv_m, u_m):
    x = qa + theta * (qb - qa)
    t_p = np.linalg.norm(x)
    s = Vinv_m @ (x / t_p)
    sigma = s.sum()
    if sigma >= 0.0:
        return -np.inf
    t_m = -1.0 / sigma
    L_p = (1.0 - theta) * u_a + theta * u_b
    L_m = (s / sigma) @ u_m
    return 2.0 * ((L_p - u0) / t_p + (L_m - u0) / t_m) / (t_p + t_m)


def _sym_chord_max(qa, qb, u_a, u_b, u_am, u_bm, u0, lo, hi):
    """Closed-form maximum of the symmetric-pair objective on [lo, hi].

    Objective (a + b theta) / (c + d theta + e theta^2); stationary points
    solve b e theta^2 + 2 a e theta + (a d - b c) = 0.
    """
    a = u_a + u_am - 2.0 * u0
    b = (u_b + u_bm) - (u_a + u_am)
    c = qa @ qa
    d = 2.0 * qa @ (qb - qa)
    e = (qb - qa) @ (qb - qa)

    def val(th):
        return (a + b * th) / (c + d * th + e * th * th)

    cands = [lo, hi]
    A, B, C = b * e, 2.0 * a * e, a * d - b * c
    if abs(A) > 1e-300:
        disc = B * B - 4.0 * A * C
        if disc >= 0.0:
            root = np.sqrt(disc)
            for th in ((-B + root) / (2 * A), (-B - root) / (2 * A)):
                if lo < th < hi:
                    cands.append(th)
    elif abs(B) > 1e-300:
        th = -C / B
        if lo < th < hi:
            cands.append(th)
    return max(val(th) for th in cands)


def _golden_max(f, lo, hi, coarse=25):
    """Coarse sampling then golden-section refine; returns (value, arg)."""
    thetas = np.linspace(lo, hi, coarse)
    vals = np.array([f(t) for t in thetas])
    k = int(np.argmax(vals))
    best, arg = vals[k], thetas[k]
    a = thetas[max(k - 1, 0)]
    b = thetas[min(k + 1, coarse - 1)]
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > 1e-10:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    for v, t in ((fc, c), (fd, d)):
        if v > best:
            best, arg = v, t
    return best, arg


# --- 3-D projected coordinate ascent ---------------------------------------


def _ascent_max(V_p, u_p, Vinv_m, u_m, u0):
    n = V_p.shape[1]

    def obj(lam):
        x = V_p @ lam
        t_p = np.linalg.norm(x)
        if t_p < 1e-300:
            return -np.inf
        s = Vinv_m @ (x / t_p)
        if s.max() > FARKAS_TOL:
            return -np.inf
        sigma = s.sum()
        if sigma >= -1e-300:
            return -np.inf
        t_m = -1.0 / sigma
        L_p = lam @ u_p
        L_m = (s / sigma) @ u_m
        return 2.0 * ((L_p - u0) / t_p + (L_m - u0) / t_m) / (t_p + t_m)

    starts = [np.eye(n)[k] for k in range(n)]
    starts += [(np.eye(n)[a] + np.eye(n)[b]) / 2.0 for a in range(n) for b in range(a + 1, n)]
    starts.append(np.full(n, 1.0 / n))
    starts = starts[:ASCENT_RESTARTS]
    best = -np.inf
    for lam0 in starts:
        lam = lam0.copy()
        f = obj(lam)
        for _ in range(ASCENT_MAXIT):
            improved = 0.0
            for c in range(n):
                rest = lam.copy()
                rest[c] = 0.0
                tot = rest.sum()
                if tot < 1e-300:
                    continue
                rest /= tot

                def line(g, c=c, rest=rest):
                    trial = (1.0 - g) * rest
                    trial[c] += g
                    return obj(trial)

                g_best, g_arg = _golden_max(line, 0.0, 1.0, coarse=13)
                if g_best > f + ASCENT_TOL:
                    lam = (1.0 - g_arg) * rest
                    lam[c] += g_arg
                    improved = max(improved, g_best - f)
                    f = g_best
            if improved <= ASCENT_TOL:
                break
        best = max(best, f)
    return best


# --- pair types and per-pair optimization -----------------------------------


@dataclass(frozen=True)
class AntipodalPair:
    """Forward/backward facet pair whose cones overlap through the center."""

    center: int
    forward_vertices: tuple
    backward_vertices: tuple
    V_p: np.ndarray
    V_m: np.ndarray
    Vinv_m: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "Vinv_m", np.linalg.inv(self.V_m))
        if self.V_p.shape[1] == 2:
            win = _chord_window(self.V_p[:, 0], self.V_p[:, 1], self.Vinv_m)
            # a ray-only overlap (zero-width window) still counts
            relaxed = win is not None or self._ray_overlap()
            if not relaxed:
                raise NotAntipodal(
                    f"point {self.center}: facet cones do not oppose each other"
                )
        else:
            if not self._ray_overlap():
                raise NotAntipodal(
                    f"point {self.center}: facet cones do not oppose each other"
                )

    def _ray_overlap(self):
        from scipy.optimize import linprog

        n = self.V_p.shape[0]
        Vinv_p = np.linalg.inv(self.V_p)
        A_ub = np.vstack([-Vinv_p, self.Vinv_m])
        b_ub = np.full(2 * n, FARKAS_TOL)
        A_eq = Vinv_p.sum(axis=0)[None, :]
        res = linprog(
            np.zeros(n),
            A_ub=A_ub,
            b_ub=b_ub,
            A_eq=A_eq,
            b_eq=np.ones(1),
            bounds=[(None, None)] * n,
            method="highs",
        )
        return res.status == 0


def pair_from_frames(i, fwd, bwd):
    """AntipodalPair from two SimplexFrames centered at point i."""
    return AntipodalPair(
        center=i,
        forward_vertices=tuple(fwd.vertex_indices),
        backward_vertices=tuple(bwd.vertex_indices),
        V_p=fwd.V,
        V_m=bwd.V,
    )


def _pair_max_arrays(V_p, V_m, Vinv_m, u_p, u_m, u0, want_window=None):
    """Maximum of the pair objective; 2-D specialized, 3-D via ascent."""
    n = V_p.shape[0]
    if n != 2:
        return _ascent_max(V_p, u_p, Vinv_m, u_m, u0)
    qa, qb = V_p[:, 0], V_p[:, 1]
    scale = max(np.linalg.norm(qa), np.linalg.norm(qb))
    win = want_window
    if win is None:
        win = _chord_window(qa, qb, Vinv_m)
    if win is None:
        return -np.inf
    lo, hi = win
    perm = _negation_perm(V_p, V_m, 1e-9 * scale)
    if perm is not None:
        u_pm = np.array([u_m[perm[0]], u_m[perm[1]]])
        return _sym_chord_max(qa, qb, u_p[0], u_p[1], u_pm[0], u_pm[1], u0, lo, hi)
    if hi - lo < 1e-14:
        return _chord_objective(lo, qa, qb, u_p[0], u_p[1], u0, Vinv_m, u_m)
    return _golden_max(
        lambda th: _chord_objective(th, qa, qb, u_p[0], u_p[1], u0, Vinv_m, u_m),
        lo,
        hi,
    )[0]


def pair_maximize(u, i, pair):
    """Largest curvature the pair can certify at point i."""
    u = np.asarray(u, dtype=float)
    u_p = u[list(pair.forward_vertices)]
    u_m = u[list(pair.backward_vertices)]
    val = _pair_max_arrays(pair.V_p, pair.V_m, pair.Vinv_m, u_p, u_m, float(u[i]))
    if val == -np.inf:
        # ray-only overlap: evaluate at the single common direction
        val = _ray_only_value(pair, u, u_p, u_m)
    return float(val)


def _ray_only_value(pair, u, u_p, u_m):
    # the overlap is a single ray through a shared cone boundary; locate it
    # by scanning the forward chord for the least-infeasible parameter
    qa, qb = pair.V_p[:, 0], pair.V_p[:, 1]
    thetas = np.linspace(0.0, 1.0, 2001)
    X = qa[None, :] + thetas[:, None] * (qb - qa)[None, :]
    S = X @ pair.Vinv_m.T
    worst = S.max(axis=1)
    k = int(np.argmin(worst))
    u0 = float(u[pair.center])
    return _chord_objective(thetas[k], qa, qb, u_p[0], u_p[1], u0, pair.Vinv_m, u_m)


# --- point-level extremal eigenvalues ---------------------------------------


def antipodal_pairs(stencils, i):
    """All overlapping facet pairs at point i, as AntipodalPair objects."""
    V, Vinv, ids, antipode = _facet_data(stencils, i)
    out = []
    for k, j, _win in _pair_indices(V, Vinv, antipode):
        out.append(
            AntipodalPair(
                center=i,
                forward_vertices=tuple(int(v) for v in np.atleast_1d(ids[k])),
                backward_vertices=tuple(int(v) for v in np.atleast_1d(ids[j])),
                V_p=V[k],
                V_m=V[j],
            )
        )
    return out


def _pair_indices(V, Vinv, antipode):
    """(forward facet, backward facet, window) triples with real overlap."""
    F = len(V)
    n = V.shape[1]
    if antipode is not None and np.all(antipode >= 0):
        # fully symmetric table: only exact negation pairs carry a
        # positive-measure overlap, and each unordered pair once suffices
        for k in range(F):
            j = int(antipode[k])
            if k <= j:
                yield k, j, None
        return
    for k in range(F):
        if n == 2:
            qa, qb = V[k][:, 0], V[k][:, 1]
            for j in range(F):
                win = _chord_window(qa, qb, Vinv[j])
                if win is not None:
                    yield k, j, win
        else:
            for j in range(F):
                yield k, j, None


def max_eigenvalue(u, i, stencils):
    """Largest-eigenvalue approximation: best value over all pairs."""
    u = np.asarray(u, dtype=float)
    V, Vinv, ids, antipode = _facet_data(stencils, i)
    u0 = float(u[i])
    uv = u[ids]
    best = -np.inf
    for k, j, win in _pair_indices(V, Vinv, antipode):
        val = _pair_max_arrays(V[k], V[j], Vinv[j], uv[k], uv[j], u0, want_window=win)
        if val > best:
            best = val
    if best == -np.inf:
        raise NotAntipodal(f"point {i}: no opposing facet pairs")
    return float(best)


def min_eigenvalue(u, i, stencils):
    """Smallest-eigenvalue approximation; exact negative of max on -u."""
    return -max_eigenvalue(-np.asarray(u, dtype=float), i, stencils)


# --- direction-sampled variant ----------------------------------------------


def _pairwise_dtheta(dirs):
    g = np.clip(dirs @ dirs.T, -1.0, 1.0)
    np.fill_diagonal(g, -1.0)
    return float(np.arccos(g.max(axis=1)).max())


@dataclass(frozen=True)
class DirectionFan:
    """Unit direction set with its effective angular resolution."""

    directions: np.ndarray
    dtheta_e: float

    @classmethod
    def uniform(cls, k, dim=2, target=None):
        if dim == 2:
            ang = np.linspace(0.0, 2.0 * np.pi, k, endpoint=False)
            dirs = np.column_stack([np.cos(ang), np.sin(ang)])
        elif dim == 3:
            # Fibonacci sphere
            idx = np.arange(k) + 0.5
            phi = np.arccos(1.0 - 2.0 * idx / k)
            theta = np.pi * (1.0 + np.sqrt(5.0)) * idx
            dirs = np.column_stack(
                [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)]
            )
        else:
            raise ValueError("only 2-D and 3-D fans are supported")
        dte = _pairwise_dtheta(dirs)
        if target is not None and dte > target:
            raise ValueError(
                f"fan of {k} directions resolves {dte:.4f} rad, coarser than {target:.4f}"
            )
        return cls(directions=dirs, dtheta_e=dte)

    @classmethod
    def from_target(cls, target, dim=2):
        """Smallest convenient fan with dtheta_e at or below the target."""
        if dim == 2:
            k = max(4, int(np.ceil(2.0 * np.pi / target)))
            return cls.uniform(k, dim=2, target=target)
        k = max(8, int(np.ceil(16.0 / target**2)))
        while True:
            fan = cls.uniform(k, dim=3)
            if fan.dtheta_e <= target:
                return cls.uniform(k, dim=3, target=target)
            k = int(np.ceil(k * 1.3))


def default_fan(params, dim=2):
    """Fan sized so sampling error sits below the scheme error (dθ_e ≤ dθ²)."""
    return DirectionFan.from_target(params.dtheta**2, dim=dim)


def sampled_eigenvalue(u, i, stencils, fan, which="max"):
    """Extremal monotone second difference over the fan directions."""
    if which not in ("max", "min"):
        raise ValueError(f"which must be 'max' or 'min', got {which!r}")
    vals = [second_derivative(u, i, w, stencils) for w in fan.directions]
    return max(vals) if which == "max" else min(vals)
