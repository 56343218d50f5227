"""Residual operators for the two benchmark degenerate elliptic problems.

Both problems prescribe Dirichlet data g and an interior equation built
from the extremal curvature values: the convex-envelope obstacle problem
max{u - g, -lambda_min} = 0 and the Pucci maximal equation, stated here
in the descent orientation -(alpha lambda_max + lambda_min) = 0 so that
explicit steps decrease the residual.

Residuals over full clouds need the extremes at every non-boundary point
per iteration, so this module carries vectorized engines instead of the
per-point routines in module eigen: lattice interiors get the exact
closed-form pair optimization batched over points, boundary-clipped
lattice points and unstructured clouds get a precomputed direction fan
whose per-direction stencil weights are frozen into sparse matrices.
Jacobians freeze the winning branch (pair and chord position, or fan
direction), which is the standard semi-smooth linearization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .meshes import build_regular_grid
from .stencils import (
    GridStencilSet,
    _farkas_masks,
    _pick_min_area,
    preprocess_cloud,
)

CONE_TIPS = (np.array([-3.0 / 7.0, 0.0]), np.array([3.0 / 7.0, 0.0]))
RING_FAN_SIZE = 64


def double_cone(x, p1=None, p2=None):
    """Distance to the nearer of two cone tips (default +-(3/7, 0))."""
    x = np.asarray(x, dtype=float)
    p1 = CONE_TIPS[0] if p1 is None else np.asarray(p1, dtype=float)
    p2 = CONE_TIPS[1] if p2 is None else np.asarray(p2, dtype=float)
    d1 = np.linalg.norm(x - p1, axis=-1)
    d2 = np.linalg.norm(x - p2, axis=-1)
    return np.minimum(d1, d2)


def pucci_exact(x, alpha=2.0):
    """Radial solution -rho^(1-alpha) about the off-domain pole (-2,-2)."""
    x = np.asarray(x, dtype=float)
    rho = np.sqrt((x[..., 0] + 2.0) ** 2 + (x[..., 1] + 2.0) ** 2)
    return -(rho ** (1.0 - alpha))


def segment_distance(x, p1=None, p2=None):
    """Distance to the segment joining the cone tips.

    Convex, below the double cone, and equal to it outside the strip
    between the tips; a handy lower bound for envelope solutions.
    """
    x = np.asarray(x, dtype=float)
    p1 = CONE_TIPS[0] if p1 is None else np.asarray(p1, dtype=float)
    p2 = CONE_TIPS[1] if p2 is None else np.asarray(p2, dtype=float)
    d = p2 - p1
    t = np.clip(((x - p1) @ d) / (d @ d), 0.0, 1.0)
    proj = p1 + t[..., None] * d
    return np.linalg.norm(x - proj, axis=-1)


@dataclass(frozen=True)
class GridFunction:
    """One finite value per cloud point."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ValueError("grid function values must be a flat vector")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def sample(cls, fn, cloud):
        return cls(np.asarray(fn(cloud.points), dtype=float))

    def check_matches(self, cloud):
        if len(self.values) != cloud.n_points:
            raise ValueError(
                f"{len(self.values)} values for a {cloud.n_points}-point cloud"
            )
        return self


def _values_of(u):
    return np.asarray(getattr(u, "values", u), dtype=float)


# --- lattice engine ---------------------------------------------------------


def _half_circle(k):
    ang = np.pi * np.arange(k) / k
    return np.column_stack([np.cos(ang), np.sin(ang)])


def _table_dir_weights_interp(table, dirs):
    """Frozen interpolation weights over table slots, one row per direction.

    Returns (W, c0, ok): W[(d, slot)] neighbor weights, c0 center weights;
    rows with ok False have no opposing facets for that direction.
    """
    m = len(table.offsets_idx)
    K = len(dirs)
    W = np.zeros((K, m))
    c0 = np.zeros(K)
    ok = np.zeros(K, dtype=bool)
    for d, w in enumerate(dirs):
        s = table.Vinv @ w
        fwd, bwd = _farkas_masks(s)
        kp = _pick_min_area(fwd, table.area)
        km = _pick_min_area(bwd, table.area)
        if kp < 0 or km < 0:
            continue
        sp_ = s[kp]
        sm_ = s[km]
        tp = 1.0 / sp_.sum()
        tm = -1.0 / sm_.sum()
        scale = 2.0 / (tp + tm)
        row = np.zeros(m)
        np.add.at(row, table.vertex_rows[kp], scale * (sp_ * tp) / tp)
        np.add.at(row, table.vertex_rows[km], scale * (sm_ * -tm) / tm)
        W[d] = row
        c0[d] = -row.sum()
        ok[d] = True
    return W, c0, ok


def _table_dir_weights_nn(table):
    """Two-point weights for every offset whose negation is in the table."""
    offs = table.offsets_idx
    by_off = {tuple(o): k for k, o in enumerate(offs)}
    rows = []
    c0 = []
    seen = set()
    for f, o in enumerate(offs):
        b = by_off.get(tuple(-o))
        if b is None or (b, f) in seen:
            continue
        seen.add((f, b))
        t2 = float(table.offsets_phys[f] @ table.offsets_phys[f])
        row = np.zeros(len(offs))
        row[f] = 1.0 / t2
        row[b] += 1.0 / t2
        rows.append(row)
        c0.append(-2.0 / t2)
    if not rows:
        return np.zeros((0, len(offs))), np.zeros(0), np.zeros(0, dtype=bool)
    W = np.vstack(rows)
    c0 = np.array(c0)
    return W, c0, np.ones(len(c0), dtype=bool)


class _GridEngine:
    """Extremal curvatures for every non-boundary point of a lattice cloud."""

    def __init__(self, cloud, stencils, scheme="interp"):
        if scheme not in ("interp", "nn"):
            raise ValueError(f"unknown scheme {scheme!r}")
        self.cloud = cloud
        self.stencils = stencils
        self.scheme = scheme
        n = cloud.dim
        nb = ~cloud.boundary_mask
        full_id = stencils.signatures.index((stencils.reach,) * (2 * n))
        sig = stencils.signature_of

        self.interior = np.array([], dtype=np.int64)
        self.pairs = []
        if scheme == "interp":
            self.interior = np.where(nb & (sig == full_id))[0]
            self._build_interior_pairs(stencils.tables[full_id])
            grouped = np.where(nb & (sig != full_id))[0]
        else:
            grouped = np.where(nb)[0]

        # fan gap ~ sqrt(spacing)/5 keeps the ring's direction-quantization
        # error O(spacing), matched to the spatial term; a fixed fan would
        # floor the max-norm error once the lattice outresolves it
        fan_k = max(RING_FAN_SIZE, int(np.ceil(5.0 * np.pi / np.sqrt(cloud.ell))))
        self.groups = []
        for s_id in np.unique(sig[grouped]):
            pts = grouped[sig[grouped] == s_id]
            t = stencils.tables[s_id] if scheme == "interp" else stencils.nn_tables[s_id]
            flat = t.offsets_idx @ stencils.strides
            if scheme == "interp":
                W, c0, ok = _table_dir_weights_interp(t, _half_circle(fan_k))
                W, c0 = W[ok], c0[ok]
            else:
                W, c0, _ = _table_dir_weights_nn(t)
            if len(c0) == 0:
                raise ValueError(f"no opposing directions at points like {pts[0]}")
            self.groups.append(
                {"pts": pts, "ids": pts[:, None] + flat[None, :], "W": W, "c0": c0}
            )

    def _build_interior_pairs(self, t):
        done = set()
        for k in range(len(t.vertex_rows)):
            j = int(t.antipode[k])
            if j < 0 or (j, k) in done:
                continue
            done.add((k, j))
            qa, qb = t.V[k][:, 0], t.V[k][:, 1]
            # backward vertex matching each forward one under negation
            d0 = np.linalg.norm(t.V[j][:, 0] + qa)
            perm = (0, 1) if d0 < 1e-9 else (1, 0)
            self.pairs.append(
                {
                    "fa": int(t.flat_shifts[k][0]),
                    "fb": int(t.flat_shifts[k][1]),
                    "ba": int(t.flat_shifts[j][perm[0]]),
                    "bb": int(t.flat_shifts[j][perm[1]]),
                    "c": float(qa @ qa),
                    "d": float(2.0 * qa @ (qb - qa)),
                    "e": float((qb - qa) @ (qb - qa)),
                }
            )

    def _interior_pass(self, u):
        I = self.interior
        nI = len(I)
        out = {
            "vmax": np.full(nI, -np.inf),
            "vmin": np.full(nI, np.inf),
            "pmax": np.zeros(nI, dtype=np.int64),
            "pmin": np.zeros(nI, dtype=np.int64),
            "thmax": np.zeros(nI),
            "thmin": np.zeros(nI),
        }
        if nI == 0:
            return out
        two_u0 = 2.0 * u[I]
        for p, pr in enumerate(self.pairs):
            a = u[I + pr["fa"]] + u[I + pr["ba"]] - two_u0
            b = (u[I + pr["fb"]] + u[I + pr["bb"]]) - (a + two_u0)
            c, d, e = pr["c"], pr["d"], pr["e"]
            A = b * e
            B = 2.0 * a * e
            C = a * d - b * c
            disc = B * B - 4.0 * A * C
            okq = (np.abs(A) > 1e-300) & (disc > 0.0)
            sq = np.sqrt(np.where(okq, disc, 0.0))
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = np.where(okq, (-B + sq) / (2.0 * A), -1.0)
                t2 = np.where(okq, (-B - sq) / (2.0 * A), -1.0)
            ths = np.stack([np.zeros(nI), np.ones(nI), t1, t2])
            valid = np.stack(
                [
                    np.ones(nI, dtype=bool),
                    np.ones(nI, dtype=bool),
                    okq & (t1 > 0.0) & (t1 < 1.0),
                    okq & (t2 > 0.0) & (t2 < 1.0),
                ]
            )
            raw = (a[None, :] + b[None, :] * ths) / (c + d * ths + e * ths * ths)
            hi = np.where(valid, raw, -np.inf)
            lo = np.where(valid, raw, np.inf)
            ih = np.argmax(hi, axis=0)
            il = np.argmin(lo, axis=0)
            cols = np.arange(nI)
            ph, pl = hi[ih, cols], lo[il, cols]
            up = ph > out["vmax"]
            out["vmax"][up] = ph[up]
            out["pmax"][up] = p
            out["thmax"][up] = ths[ih, cols][up]
            dn = pl < out["vmin"]
            out["vmin"][dn] = pl[dn]
            out["pmin"][dn] = p
            out["thmin"][dn] = ths[il, cols][dn]
        return out

    def _group_pass(self, u, grp):
        vals = u[grp["ids"]] @ grp["W"].T + u[grp["pts"], None] * grp["c0"][None, :]
        return vals

    def extremes(self, u):
        N = self.cloud.n_points
        lmin = np.zeros(N)
        lmax = np.zeros(N)
        ip = self._interior_pass(u)
        lmax[self.interior] = ip["vmax"]
        lmin[self.interior] = ip["vmin"]
        for grp in self.groups:
            vals = self._group_pass(u, grp)
            lmax[grp["pts"]] = vals.max(axis=1)
            lmin[grp["pts"]] = vals.min(axis=1)
        return lmin, lmax

    def _interior_rows(self, arg_pair, arg_th):
        I = self.interior
        rows, cols, vals = [], [], []
        for p, pr in enumerate(self.pairs):
            m = arg_pair == p
            if not m.any():
                continue
            pts = I[m]
            th = arg_th[m]
            t2 = pr["c"] + pr["d"] * th + pr["e"] * th * th
            wA = (1.0 - th) / t2
            wB = th / t2
            for shift, wv in (
                (pr["fa"], wA),
                (pr["fb"], wB),
                (pr["ba"], wA),
                (pr["bb"], wB),
                (0, -2.0 / t2),
            ):
                rows.append(pts)
                cols.append(pts + shift)
                vals.append(wv)
        return rows, cols, vals

    def _group_rows(self, u, grp, which):
        vals = self._group_pass(u, grp)
        arg = np.argmax(vals, axis=1) if which == "max" else np.argmin(vals, axis=1)
        Wsel = grp["W"][arg]
        pts = grp["pts"]
        rows = [np.repeat(pts, grp["ids"].shape[1]), pts]
        cols = [grp["ids"].ravel(), pts]
        out_vals = [Wsel.ravel(), grp["c0"][arg]]
        return rows, cols, out_vals

    def extreme_jacobians(self, u):
        """(lmin, lmax, Jmin, Jmax) with the winning branches frozen."""
        N = self.cloud.n_points
        lmin = np.zeros(N)
        lmax = np.zeros(N)
        ip = self._interior_pass(u)
        lmax[self.interior] = ip["vmax"]
        lmin[self.interior] = ip["vmin"]
        parts = {
            "max": self._interior_rows(ip["pmax"], ip["thmax"]),
            "min": self._interior_rows(ip["pmin"], ip["thmin"]),
        }
        for grp in self.groups:
            vals = self._group_pass(u, grp)
            lmax[grp["pts"]] = vals.max(axis=1)
            lmin[grp["pts"]] = vals.min(axis=1)
            for which in ("min", "max"):
                r, c, v = self._group_rows(u, grp, which)
                parts[which][0].extend(r)
                parts[which][1].extend(c)
                parts[which][2].extend(v)
        mats = {}
        for which, (r, c, v) in parts.items():
            if r:
                rows = np.concatenate(r)
                cols = np.concatenate(c)
                data = np.concatenate(v)
                keep = data != 0.0
                mats[which] = sp.csr_matrix(
                    (data[keep], (rows[keep], cols[keep])), shape=(N, N)
                )
            else:
                mats[which] = sp.csr_matrix((N, N))
        return lmin, lmax, mats["min"], mats["max"]


# --- unstructured-cloud engine ----------------------------------------------


class _CloudEngine:
    """Direction-fan curvature engine with frozen per-direction weights."""

    def __init__(self, cloud, stencils, scheme="interp", n_dirs=None):
        if scheme not in ("interp", "nn"):
            raise ValueError(f"unknown scheme {scheme!r}")
        self.cloud = cloud
        self.scheme = scheme
        k = n_dirs or max(16, int(np.ceil(np.pi / stencils.params.dtheta**2)))
        dirs = _half_circle(k)
        N = cloud.n_points
        self.nb = np.where(~cloud.boundary_mask)[0]
        nnb = len(self.nb)
        pk = stencils.pack
        pts = cloud.points
        self.mats = []
        self.feas = np.zeros((nnb, k), dtype=bool)
        local = np.arange(nnb)
        for j, w in enumerate(dirs):
            kp, km = stencils.select_all(w, candidates=self.nb)
            ok = (kp >= 0) & (km >= 0)
            self.feas[:, j] = ok
            rows_l = local[ok]
            own = self.nb[ok]
            if self.scheme == "interp":
                sp_ = np.einsum("kij,j->ki", pk.Vinv[kp[ok]], w)
                sm_ = np.einsum("kij,j->ki", pk.Vinv[km[ok]], w)
                tp = 1.0 / sp_.sum(axis=1)
                tm = -1.0 / sm_.sum(axis=1)
                scale = 2.0 / (tp + tm)
                wf = (sp_ * tp[:, None]) * (scale / tp)[:, None]
                wb = (sm_ * -tm[:, None]) * (scale / tm)[:, None]
                cols = np.hstack([pk.vertices[kp[ok]], pk.vertices[km[ok]], own[:, None]])
                data = np.hstack([wf, wb, -(wf.sum(1) + wb.sum(1))[:, None]])
            else:
                data, cols = self._nn_rows(pk, pts, own, kp[ok], km[ok], w)
            rr = np.repeat(rows_l, cols.shape[1])
            self.mats.append(
                sp.csr_matrix(
                    (data.ravel(), (rr, cols.ravel())), shape=(nnb, N)
                )
            )

    @staticmethod
    def _nn_rows(pk, pts, own, kp, km, w):
        def snap(facets, sign):
            verts = pk.vertices[facets]
            offs = pts[verts] - pts[own][:, None, :]
            t = np.linalg.norm(offs, axis=2)
            score = (offs @ (sign * w)) / t
            pick = np.argmax(score, axis=1)
            sel = verts[np.arange(len(own)), pick]
            return sel, t[np.arange(len(own)), pick]

        f_id, tf = snap(kp, 1.0)
        b_id, tb = snap(km, -1.0)
        wf = 2.0 / (tf * (tf + tb))
        wb = 2.0 / (tb * (tf + tb))
        cols = np.column_stack([f_id, b_id, own])
        data = np.column_stack([wf, wb, -(wf + wb)])
        return data, cols

    def _vals(self, u):
        out = np.empty((len(self.nb), len(self.mats)))
        for j, M in enumerate(self.mats):
            out[:, j] = M @ u
        return out

    def extremes(self, u):
        N = self.cloud.n_points
        vals = self._vals(u)
        hi = np.where(self.feas, vals, -np.inf)
        lo = np.where(self.feas, vals, np.inf)
        lmin = np.zeros(N)
        lmax = np.zeros(N)
        lmax[self.nb] = hi.max(axis=1)
        lmin[self.nb] = lo.min(axis=1)
        return lmin, lmax

    def _rows_for(self, arg):
        N = self.cloud.n_points
        parts = []
        for j, M in enumerate(self.mats):
            m = arg == j
            if not m.any():
                continue
            sub = M[np.where(m)[0]].tocoo()
            rows = self.nb[np.where(m)[0][sub.row]]
            parts.append((rows, sub.col, sub.data))
        rows = np.concatenate([p[0] for p in parts])
        cols = np.concatenate([p[1] for p in parts])
        data = np.concatenate([p[2] for p in parts])
        return sp.csr_matrix((data, (rows, cols)), shape=(N, N))

    def extreme_jacobians(self, u):
        N = self.cloud.n_points
        vals = self._vals(u)
        hi = np.where(self.feas, vals, -np.inf)
        lo = np.where(self.feas, vals, np.inf)
        lmin = np.zeros(N)
        lmax = np.zeros(N)
        lmax[self.nb] = hi.max(axis=1)
        lmin[self.nb] = lo.min(axis=1)
        Jmax = self._rows_for(np.argmax(hi, axis=1))
        Jmin = self._rows_for(np.argmin(lo, axis=1))
        return lmin, lmax, Jmin, Jmax


def eigen_engine(cloud, stencils, scheme="interp", n_dirs=None):
    """Vectorized extremal-curvature engine matched to the stencil kind."""
    if isinstance(stencils, GridStencilSet):
        return _GridEngine(cloud, stencils, scheme=scheme)
    return _CloudEngine(cloud, stencils, scheme=scheme, n_dirs=n_dirs)


# --- problems ---------------------------------------------------------------


class EllipticProblem:
    """Residual and semi-smooth Jacobian for one benchmark problem.

    kind "convex_envelope": interior max{u - g, -lambda_min}, boundary
    u - g, with g both obstacle and boundary data.  kind "pucci":
    interior -(alpha lambda_max + lambda_min), boundary u - g.
    """

    def __init__(self, kind, cloud, stencils, g, alpha=2.0, scheme="interp", n_dirs=None):
        if kind not in ("convex_envelope", "pucci"):
            raise ValueError(f"unknown problem kind {kind!r}")
        if kind == "pucci" and not alpha > 0.0:
            raise ValueError("pucci exponent alpha must be positive")
        g = _values_of(g)
        if len(g) != cloud.n_points or not np.all(np.isfinite(g)):
            raise ValueError("boundary/obstacle data must be finite, one per point")
        self.kind = kind
        self.cloud = cloud
        self.stencils = stencils
        self.g = g
        self.alpha = float(alpha)
        self.scheme = scheme
        self.engine = eigen_engine(cloud, stencils, scheme=scheme, n_dirs=n_dirs)
        self.boundary = cloud.boundary_mask
        self.interior = ~cloud.boundary_mask

    def initial_guess(self):
        return self.g.copy()

    def residual(self, u):
        u = _values_of(u)
        lmin, lmax = self.engine.extremes(u)
        r = u - self.g
        if self.kind == "convex_envelope":
            env = -lmin
            r[self.interior] = np.maximum(
                u[self.interior] - self.g[self.interior], env[self.interior]
            )
        else:
            r[self.interior] = -(self.alpha * lmax[self.interior] + lmin[self.interior])
        return r

    def jacobian(self, u):
        u = _values_of(u)
        N = self.cloud.n_points
        lmin, lmax, Jmin, Jmax = self.engine.extreme_jacobians(u)
        if self.kind == "convex_envelope":
            obstacle = (u - self.g) >= -lmin
            ident = self.boundary | (self.interior & obstacle)
            D_id = sp.diags(ident.astype(float))
            D_env = sp.diags((self.interior & ~obstacle).astype(float))
            return (D_id + D_env @ (-Jmin)).tocsr()
        D_b = sp.diags(self.boundary.astype(float))
        D_i = sp.diags(self.interior.astype(float))
        return (D_b + D_i @ (-(self.alpha * Jmax + Jmin))).tocsr()

    def lipschitz(self, u):
        J = self.jacobian(_values_of(u))
        return float(np.abs(J).sum(axis=1).max())


def convex_envelope_residual(u, g, cloud, stencils, scheme="interp", problem=None):
    """One-shot convex-envelope residual; builds a throwaway engine."""
    prob = problem or EllipticProblem("convex_envelope", cloud, stencils, g, scheme=scheme)
    return prob.residual(u)


def pucci_residual(u, alpha, g, cloud, stencils, scheme="interp", problem=None):
    """One-shot Pucci residual in the descent orientation."""
    prob = problem or EllipticProblem(
        "pucci", cloud, stencils, g, alpha=alpha, scheme=scheme
    )
    return prob.residual(u)


# --- fine-grid envelope reference -------------------------------------------

_oracle_cache = {}


def convex_envelope_oracle(
    cloud,
    g_fn=double_cone,
    factor=4,
    rho=3,
    tol=1e-10,
    domain=((-1.0, -1.0), (1.0, 1.0)),
    side=None,
):
    """Reference envelope values at cloud.points from a much finer lattice.

    The fine solve runs the obstacle problem to tight tolerance with a
    coarse-to-fine chain of semi-smooth Newton solves, then evaluates at
    the requested points by bilinear interpolation.  When the cloud is a
    lattice on the same box, pick factor so the fine lattice nests it and
    the interpolation is exact at the nodes.
    """
    from .solvers import SolverConfig, newton_solve

    if side is None:
        if cloud.grid is not None:
            m = int(cloud.grid.shape[0])
            side = factor * (m - 1) + 1
        else:
            span = float(domain[1][0] - domain[0][0])
            side = int(np.ceil(factor * span / cloud.h)) + 1
    key = (g_fn, side, rho, float(tol), domain)
    if key not in _oracle_cache:
        sides = [side]
        while sides[0] > 8 * rho:
            nxt = (sides[0] - 1) // 2 + 1
            if nxt < 2 * rho + 1:
                break
            sides.insert(0, nxt)
        u = None
        cfg = SolverConfig(tol=tol, max_iters=60)
        for s_pts in sides:
            fine = build_regular_grid(s_pts, domain=domain, rho=rho)
            g = np.asarray(g_fn(fine.points), dtype=float)
            prob = EllipticProblem("convex_envelope", fine, preprocess_cloud(fine), g)
            if u is None:
                u0 = prob.initial_guess()
            else:
                u0 = _lattice_interp(prev, u, fine.points)
            u, _ = newton_solve(prob.residual, prob.jacobian, u0, cfg)
            prev = fine
        _oracle_cache[key] = (prev, u)
    fine, u = _oracle_cache[key]
    return _lattice_interp(fine, u, np.asarray(cloud.points, dtype=float))


def _lattice_interp(grid_cloud, values, points):
    """Bilinear interpolation of lattice values at arbitrary points."""
    from scipy.interpolate import RegularGridInterpolator

    g = grid_cloud.grid
    m0, m1 = g.shape
    ax0 = np.linspace(g.lo[0], g.hi[0], m0)
    ax1 = np.linspace(g.lo[1], g.hi[1], m1)
    itp = RegularGridInterpolator(
        (ax0, ax1), values.reshape(m0, m1), bounds_error=False, fill_value=None
    )
    return itp(points)
