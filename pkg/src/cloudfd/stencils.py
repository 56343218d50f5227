"""Stencil generation: neighbor harvesting, direction hulls, Farkas selection.

Two stencil-set flavors share one facet representation:

- CloudStencilSet runs the generic preprocessing on any triangulated cloud:
  graph-limited annulus search, collinear deduplication, convex hull of the
  normalized directions, one simplex per hull facet.
- GridStencilSet exploits lattice structure: points are grouped by their
  boundary-clipping signature, and each group shares a single facet table
  expressed in index offsets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull

from .errors import (
    EmptyNeighborhood,
    HullDegenerate,
    NoBackwardSimplex,
    NoForwardSimplex,
)
from .geometry import COND_CAP, SearchParams, SimplexFrame, cone_constant, normalize

FARKAS_TOL = 1e-9


def _dedup_directions(offsets, prefer=None):
    """Keep one representative per direction: the smallest offset in norm.

    Returns (kept offset rows, unit directions).  `prefer` breaks exact norm
    ties deterministically (smaller value wins); defaults to row order.
    """
    offsets = np.asarray(offsets, dtype=float)
    norms = np.linalg.norm(offsets, axis=1)
    dirs = offsets / norms[:, None]
    if prefer is None:
        prefer = np.arange(len(offsets))
    order = np.lexsort((prefer, norms))
    key = np.round(dirs[order], 9)
    _, first = np.unique(key, axis=0, return_index=True)
    sel = np.sort(order[first])
    return sel, dirs[sel]


def _facet_vertex_lists(dirs):
    """Hull facets of a set of unit directions, as local vertex index rows.

    In 2-D the directions are in convex position on the unit circle, so the
    hull edges are exactly the angularly consecutive pairs (plus the closing
    chord when the set does not surround the origin).  3-D goes through Qhull.
    """
    m, n = dirs.shape
    if m < n:
        return np.empty((0, n), dtype=int)
    if m == n:
        return np.arange(n, dtype=int).reshape(1, n)
    if n == 2:
        ang = np.arctan2(dirs[:, 1], dirs[:, 0])
        order = np.argsort(ang, kind="stable")
        return np.column_stack([order, np.roll(order, -1)])
    hull = ConvexHull(dirs)
    return np.asarray(hull.simplices, dtype=int)


def _facet_volume(V):
    """(n-1)-volume of the facet spanned by the vertex points, batched."""
    if V.shape[1] == 2:
        return np.linalg.norm(V[:, :, 0] - V[:, :, 1], axis=1)
    a = V[:, :, 1] - V[:, :, 0]
    b = V[:, :, 2] - V[:, :, 0]
    return 0.5 * np.linalg.norm(np.cross(a, b), axis=1)


def _build_facets(offsets, vertex_rows):
    """Assemble V, V^-1, and areas for facet vertex rows; drop singular facets.

    Returns (kept_rows, V, Vinv, area); rows are canonically ordered by their
    sorted vertex tuples so regeneration is bit-stable.
    """
    n = offsets.shape[1]
    if len(vertex_rows) == 0:
        return vertex_rows, np.empty((0, n, n)), np.empty((0, n, n)), np.empty(0)
    vertex_rows = np.sort(vertex_rows, axis=1)
    order = np.lexsort(tuple(vertex_rows[:, k] for k in range(n - 1, -1, -1)))
    vertex_rows = vertex_rows[order]
    V = offsets[vertex_rows].transpose(0, 2, 1)  # columns are vertex offsets
    with np.errstate(divide="ignore", invalid="ignore"):
        sv = np.linalg.svd(V, compute_uv=False)
    good = (sv[:, -1] > 0) & (sv[:, 0] / np.where(sv[:, -1] > 0, sv[:, -1], 1.0) <= COND_CAP)
    vertex_rows, V = vertex_rows[good], V[good]
    Vinv = np.linalg.inv(V) if len(V) else np.empty((0, n, n))
    return vertex_rows, V, Vinv, _facet_volume(V)


@dataclass
class FacetPack:
    """Flat per-facet arrays for a whole cloud, segmented by owner point."""

    owner: np.ndarray          # (M,) point id
    vertices: np.ndarray       # (M, n) cloud point ids
    V: np.ndarray              # (M, n, n) offset columns
    Vinv: np.ndarray           # (M, n, n)
    area: np.ndarray           # (M,)
    row_start: np.ndarray      # (N+1,) segment offsets


def _farkas_masks(s):
    fwd = np.all(s >= -FARKAS_TOL, axis=-1)
    bwd = np.all(s <= FARKAS_TOL, axis=-1)
    return fwd, bwd


def _pick_min_area(mask, area):
    """Index of the smallest-area facet among masked ones, or -1."""
    if not mask.any():
        return -1
    idx = np.flatnonzero(mask)
    return int(idx[np.argmin(area[idx])])


class CloudStencilSet:
    """Per-point simplex lists for a triangulated cloud."""

    def __init__(self, cloud, params, pack):
        self.cloud = cloud
        self.params = params
        self.pack = pack

    @property
    def n_points(self):
        return self.cloud.n_points

    def n_simplices(self, i):
        return int(self.pack.row_start[i + 1] - self.pack.row_start[i])

    def simplices(self, i):
        lo, hi = self.pack.row_start[i], self.pack.row_start[i + 1]
        return [
            SimplexFrame(i, tuple(self.pack.vertices[k]), self.pack.V[k])
            for k in range(lo, hi)
        ]

    def _frame(self, k):
        return SimplexFrame(
            int(self.pack.owner[k]), tuple(self.pack.vertices[k]), self.pack.V[k]
        )

    def facet_arrays(self, i, k):
        """Vertex ids and Vinv for a selection index k returned for point i."""
        return self.pack.vertices[k], self.pack.Vinv[k]

    def select_pair_indices(self, i, w):
        lo, hi = self.pack.row_start[i], self.pack.row_start[i + 1]
        if lo == hi:
            raise NoForwardSimplex(f"point {i} has no stencil simplices")
        s = self.pack.Vinv[lo:hi] @ w
        fwd, bwd = _farkas_masks(s)
        area = self.pack.area[lo:hi]
        kp = _pick_min_area(fwd, area)
        if kp < 0:
            raise NoForwardSimplex(f"point {i}: no simplex in the forward cone of {w}")
        km = _pick_min_area(bwd, area)
        if km < 0:
            raise NoBackwardSimplex(f"point {i}: no simplex in the backward cone of {w}")
        return int(lo + kp), int(lo + km)

    def select_all(self, w, candidates=None):
        """Vectorized forward/backward selection for one direction.

        Returns (kp, km) arrays of pack row indices per point, -1 where the
        respective cone holds no simplex.  `candidates` limits the points.
        """
        pk = self.pack
        s = np.einsum("kij,j->ki", pk.Vinv, w)
        fwd, bwd = _farkas_masks(s)
        N = self.n_points
        out = []
        for mask in (fwd, bwd):
            key = np.where(mask, pk.area, np.inf)
            order = np.lexsort((key, pk.owner))
            owner_sorted = pk.owner[order]
            first = np.searchsorted(owner_sorted, np.arange(N))
            sel = np.full(N, -1, dtype=np.int64)
            valid = first < len(order)
            rows = order[np.clip(first, 0, max(len(order) - 1, 0))]
            hit = valid & (owner_sorted[np.clip(first, 0, max(len(order) - 1, 0))] == np.arange(N)) & mask[rows]
            sel[hit] = rows[hit]
            out.append(sel)
        kp, km = out
        if candidates is not None:
            kp, km = kp[candidates], km[candidates]
        return kp, km


def preprocess_cloud(cloud, dtheta=None, narrow=True, params=None):
    """Build the stencil set for a cloud.

    With dtheta=None a lattice cloud gets the fast grid treatment driven by
    its stencil radius rho.  Otherwise the generic annulus search runs with
    radii from (h, dtheta); `narrow` picks the tighter radius band.  An
    explicit SearchParams overrides the radius formulas entirely.
    """
    if params is not None:
        return _preprocess_generic(cloud, params)
    if dtheta is None:
        if cloud.grid is None:
            raise ValueError("dtheta is required for non-lattice clouds")
        return GridStencilSet(cloud)
    params = SearchParams.from_resolution(cloud.h, dtheta, cloud.dim, narrow=narrow)
    return _preprocess_generic(cloud, params)


def _preprocess_generic(cloud, params):
    pts = cloud.points
    N = cloud.n_points
    n = cloud.dim
    r, R = params.r, params.R
    slack = 1e-12 * max(R, 1.0)
    adj = cloud.adjacency
    indptr, indices = adj.indptr, adj.indices
    hops = int(np.ceil(R / cloud.ell))
    is_boundary = cloud.boundary_mask

    mark = np.full(N, -1, dtype=np.int64)
    owners, vert_rows, V_rows, Vinv_rows, area_rows = [], [], [], [], []
    counts = np.zeros(N, dtype=np.int64)

    for i in range(N):
        # breadth-first to depth p, pruned to the R-ball as it grows
        mark[i] = i
        frontier = np.array([i])
        reach = []
        dists = []
        for _ in range(hops):
            nbr = np.concatenate(
                [indices[indptr[v]:indptr[v + 1]] for v in frontier]
            )
            nbr = np.unique(nbr)
            nbr = nbr[mark[nbr] != i]
            if nbr.size:
                dn = np.linalg.norm(pts[nbr] - pts[i], axis=1)
                inside = dn <= R + slack
                nbr, dn = nbr[inside], dn[inside]
            if nbr.size == 0:
                break
            mark[nbr] = i
            reach.append(nbr)
            dists.append(dn)
            frontier = nbr
        if not reach:
            raise EmptyNeighborhood(i)
        cand = np.concatenate(reach)
        d = np.concatenate(dists)
        # boundary neighbors are exempt from the lower radius bound: the
        # near-boundary existence argument builds simplices from boundary
        # points at distances down to delta
        keep = (d >= r - slack) | is_boundary[cand]
        cand = cand[keep]
        if cand.size == 0:
            raise EmptyNeighborhood(i)
        offs = pts[cand] - pts[i]
        sel, dirs = _dedup_directions(offs, prefer=cand)
        cand, offs = cand[sel], offs[sel]
        # ascending cloud ids so the canonical facet order is in vertex ids
        perm = np.argsort(cand)
        cand, offs, dirs = cand[perm], offs[perm], dirs[perm]
        if np.linalg.matrix_rank(offs) < n:
            raise HullDegenerate(i)
        rows = _facet_vertex_lists(dirs)
        rows, V, Vinv, area = _build_facets(offs, rows)
        if len(rows) == 0:
            raise HullDegenerate(i)
        owners.append(np.full(len(rows), i, dtype=np.int64))
        vert_rows.append(cand[rows])
        V_rows.append(V)
        Vinv_rows.append(Vinv)
        area_rows.append(area)
        counts[i] = len(rows)

    row_start = np.zeros(N + 1, dtype=np.int64)
    np.cumsum(counts, out=row_start[1:])
    pack = FacetPack(
        owner=np.concatenate(owners),
        vertices=np.concatenate(vert_rows),
        V=np.concatenate(V_rows),
        Vinv=np.concatenate(Vinv_rows),
        area=np.concatenate(area_rows),
        row_start=row_start,
    )
    return CloudStencilSet(cloud, params, pack)


@dataclass
class SigTable:
    """Shared facet table for all points with one boundary-clipping signature."""

    offsets_idx: np.ndarray    # (m, n) lattice index offsets
    offsets_phys: np.ndarray   # (m, n) physical offsets
    vertex_rows: np.ndarray    # (M, n) rows into offsets
    V: np.ndarray
    Vinv: np.ndarray
    area: np.ndarray
    flat_shifts: np.ndarray    # (M, n) flat-index shifts per facet vertex
    antipode: np.ndarray       # (M,) facet index of the negated facet, or -1


class GridStencilSet:
    """Lattice stencils parameterized by the stencil radius rho.

    Directions are the primitive lattice offsets of Chebyshev norm <= rho.
    Two vertex choices share that direction set: the interpolation tables
    place each vertex at the first multiple of its primitive at distance
    >= rho spacings, so facet vertices sit at comparable radii and the
    direction-interpolation error stays O(dtheta^2); the nearest-neighbour
    tables keep the primitives themselves, trading accuracy in oblique
    directions for the shortest possible reach.
    """

    def __init__(self, cloud):
        if cloud.grid is None:
            raise ValueError("GridStencilSet needs a lattice cloud")
        self.cloud = cloud
        g = cloud.grid
        self.rho = g.rho
        shape = np.asarray(g.shape)
        n = cloud.dim
        self.strides = np.array(
            [int(np.prod(shape[k + 1:])) for k in range(n)], dtype=np.int64
        )
        self._primitives = self._primitive_offsets()
        self.reach = int(
            max(np.abs(self._far_multiple(p) * p).max() for p in self._primitives)
        )
        idx = np.column_stack(np.unravel_index(np.arange(cloud.n_points), g.shape))
        lo = np.minimum(idx, self.reach)
        hi = np.minimum(shape[None, :] - 1 - idx, self.reach)
        sig_key = np.concatenate([lo, hi], axis=1)
        uniq, inverse = np.unique(sig_key, axis=0, return_inverse=True)
        self.signature_of = inverse
        self.signatures = [tuple(row) for row in uniq]
        self.tables = [self._build_table(sig, far=True) for sig in self.signatures]
        self.nn_tables = [self._build_table(sig, far=False) for sig in self.signatures]
        self.params = self._derive_params()

    def _primitive_offsets(self):
        n = self.cloud.dim
        axes = [np.arange(-self.rho, self.rho + 1)] * n
        mesh = np.meshgrid(*axes, indexing="ij")
        offs = np.column_stack([m.ravel() for m in mesh])
        offs = offs[np.any(offs != 0, axis=1)]
        prim = np.gcd.reduce(np.abs(offs), axis=1) == 1
        return offs[prim]

    def _far_multiple(self, p):
        return max(1, int(np.ceil(self.rho / np.linalg.norm(p) - 1e-12)))

    def _build_table(self, sig, far):
        g = self.cloud.grid
        n = self.cloud.dim
        lo, hi = np.array(sig[:n]), np.array(sig[n:])
        picked = []
        for p in self._primitives:
            k0 = self._far_multiple(p) if far else 1
            for k in range(k0, 0, -1):
                q = k * p
                if np.all(q >= -lo) and np.all(q <= hi):
                    picked.append(q)
                    break
        if not picked:
            return None
        offs_idx = np.array(picked, dtype=np.int64)
        offs_phys = offs_idx @ g.lattice.T
        if np.linalg.matrix_rank(offs_phys) < n:
            return None
        dirs = offs_phys / np.linalg.norm(offs_phys, axis=1)[:, None]
        rows = _facet_vertex_lists(dirs)
        rows, V, Vinv, area = _build_facets(offs_phys, rows)
        if len(rows) == 0:
            return None
        flat = offs_idx @ self.strides
        by_offsets = {
            tuple(sorted(map(tuple, offs_idx[r]))): k for k, r in enumerate(rows)
        }
        antipode = np.array(
            [
                by_offsets.get(tuple(sorted(map(tuple, -offs_idx[r]))), -1)
                for r in rows
            ],
            dtype=np.int64,
        )
        return SigTable(
            offsets_idx=offs_idx,
            offsets_phys=offs_phys,
            vertex_rows=rows,
            V=V,
            Vinv=Vinv,
            area=area,
            flat_shifts=flat[rows],
            antipode=antipode,
        )

    def _derive_params(self):
        g = self.cloud.grid
        n = self.cloud.dim
        full = self.tables[self.signatures.index((self.reach,) * (2 * n))]
        norms = np.linalg.norm(full.offsets_phys, axis=1)
        r, R = float(norms.min()), float(norms.max())
        if n == 2:
            ang = np.sort(np.arctan2(full.offsets_phys[:, 1], full.offsets_phys[:, 0]))
            gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
            dtheta = float(gaps.max())
        else:
            # upper bound: widest vertex pair angle within any hull facet
            dtheta = 0.0
            for row in full.vertex_rows:
                u = full.offsets_phys[row]
                u = u / np.linalg.norm(u, axis=1)[:, None]
                c = np.clip(u @ u.T, -1.0, 1.0)
                dtheta = max(dtheta, float(np.arccos(c).max()))
        return SearchParams(
            h=g.spacing, dtheta=dtheta, dim=n, r=r, R=R, C_n=cone_constant(n)
        )

    @property
    def n_points(self):
        return self.cloud.n_points

    def table_for(self, i):
        t = self.tables[self.signature_of[i]]
        if t is None:
            raise HullDegenerate(i)
        return t

    def n_simplices(self, i):
        return len(self.table_for(i).vertex_rows)

    def simplices(self, i):
        t = self.table_for(i)
        return [
            SimplexFrame(i, tuple(int(i + s) for s in t.flat_shifts[k]), t.V[k])
            for k in range(len(t.vertex_rows))
        ]

    def select_pair_indices(self, i, w):
        t = self.table_for(i)
        s = t.Vinv @ w
        fwd, bwd = _farkas_masks(s)
        kp = _pick_min_area(fwd, t.area)
        if kp < 0:
            raise NoForwardSimplex(f"point {i}: no simplex in the forward cone of {w}")
        km = _pick_min_area(bwd, t.area)
        if km < 0:
            raise NoBackwardSimplex(f"point {i}: no simplex in the backward cone of {w}")
        return kp, km

    def _frame(self, i, k):
        t = self.table_for(i)
        return SimplexFrame(i, tuple(int(i + s) for s in t.flat_shifts[k]), t.V[k])

    def facet_arrays(self, i, k):
        """Vertex ids and Vinv for a selection index k returned for point i."""
        t = self.table_for(i)
        return i + t.flat_shifts[k], t.Vinv[k]


def select_simplex_pair(stencils, i, w):
    """Forward and backward simplices of point i for direction w.

    The forward simplex S_p satisfies V_p^-1 w >= 0 componentwise (within
    1e-9), the backward one the reversed inequality; ties go to the facet
    with the smallest (n-1)-volume.
    """
    w = normalize(w)
    kp, km = stencils.select_pair_indices(i, w)
    if isinstance(stencils, GridStencilSet):
        return stencils._frame(i, kp), stencils._frame(i, km)
    return stencils._frame(kp), stencils._frame(km)


def estimate_inward_normal(cloud, i):
    """Inward unit normal at boundary point i.

    Lattice clouds read it off the index position; triangulated clouds
    average the inward normals of the adjacent boundary segments, oriented
    by the opposite vertex of the owning triangle.
    """
    if not cloud.boundary_mask[i]:
        raise ValueError(f"point {i} is not a boundary point")
    if cloud.grid is not None:
        g = cloud.grid
        idx = np.array(np.unravel_index(i, g.shape))
        shape = np.asarray(g.shape)
        direction = np.where(idx == 0, 1.0, 0.0) - np.where(idx == shape - 1, 1.0, 0.0)
        return normalize(g.lattice @ direction)
    if cloud.dim != 2:
        raise NotImplementedError("normal estimation for 3-D unstructured clouds")
    segs = cloud.boundary_edges
    touching = segs[np.any(segs == i, axis=1)]
    if len(touching) == 0:
        raise ValueError(f"boundary point {i} lies on no boundary segment")
    normal = np.zeros(2)
    interior = cloud.points[~cloud.boundary_mask]
    anchor = interior.mean(axis=0) if len(interior) else cloud.points.mean(axis=0)
    for a, b in touching:
        d = cloud.points[b] - cloud.points[a]
        nrm = normalize(np.array([-d[1], d[0]]))
        mid = 0.5 * (cloud.points[a] + cloud.points[b])
        if nrm @ (anchor - mid) < 0:
            nrm = -nrm
        normal += nrm
    return normalize(normal)


def boundary_normal_stencil(cloud, i, stencils):
    """Forward simplex at boundary point i for the inward normal direction."""
    n_hat = estimate_inward_normal(cloud, i)
    kp, _km = _forward_only(stencils, i, n_hat)
    if isinstance(stencils, GridStencilSet):
        return stencils._frame(i, kp)
    return stencils._frame(kp)


def _forward_only(stencils, i, w):
    if isinstance(stencils, GridStencilSet):
        t = stencils.table_for(i)
        s = t.Vinv @ w
        fwd, _ = _farkas_masks(s)
        kp = _pick_min_area(fwd, t.area)
        if kp < 0:
            raise NoForwardSimplex(f"point {i}: no simplex toward {w}")
        return kp, -1
    pk = stencils.pack
    lo, hi = pk.row_start[i], pk.row_start[i + 1]
    if lo == hi:
        raise NoForwardSimplex(f"point {i} has no stencil simplices")
    s = pk.Vinv[lo:hi] @ w
    fwd, _ = _farkas_masks(s)
    kp = _pick_min_area(fwd, pk.area[lo:hi])
    if kp < 0:
        raise NoForwardSimplex(f"point {i}: no simplex toward {w}")
    return int(lo + kp), -1


@dataclass
class ResolutionReport:
    """Diagnostics from validate_resolution; nothing here is enforced."""

    boundary_condition_ok: bool        # C_n h_B <= delta tan(dtheta/2)
    delta_le_r: bool                   # reading of the normal-scheme lemma
    delta_ge_r: bool                   # reading of the interior remark
    interior_covering: float           # fraction over points with dist >= R
    near_boundary_covering: float
    n_interior_checked: int
    n_near_boundary_checked: int

    @property
    def ok(self):
        return self.boundary_condition_ok and self.interior_covering == 1.0


def validate_resolution(cloud, params, stencils=None, n_directions=180, max_points=400, seed=0):
    """Check the resolution conditions and sample the covering property.

    The delta-vs-r relation is reported under both available readings and
    not enforced either way.
    """
    boundary_ok = bool(
        params.C_n * cloud.h_B <= cloud.delta * np.tan(params.dtheta / 2.0) + 1e-15
    )
    if stencils is None:
        try:
            if cloud.grid is not None:
                stencils = preprocess_cloud(cloud)
            else:
                stencils = preprocess_cloud(cloud, params=params)
        except (EmptyNeighborhood, HullDegenerate):
            return ResolutionReport(
                boundary_condition_ok=boundary_ok,
                delta_le_r=bool(cloud.delta <= params.r),
                delta_ge_r=bool(cloud.delta >= params.r),
                interior_covering=0.0,
                near_boundary_covering=0.0,
                n_interior_checked=0,
                n_near_boundary_checked=0,
            )
    d2b = cloud.distance_to_boundary()
    interior = np.flatnonzero(~cloud.boundary_mask)
    deep = interior[d2b[interior] >= params.R]
    near = interior[d2b[interior] < params.R]
    rng = np.random.default_rng(seed)
    if len(deep) > max_points:
        deep = rng.choice(deep, size=max_points, replace=False)
    if len(near) > max_points:
        near = rng.choice(near, size=max_points, replace=False)
    if cloud.dim == 2:
        ang = np.linspace(0.0, 2 * np.pi, n_directions, endpoint=False)
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    else:
        dirs = rng.standard_normal((n_directions, 3))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]

    def covering(points):
        if len(points) == 0:
            return 1.0
        good = 0
        for i in points:
            ok = True
            for w in dirs:
                try:
                    stencils.select_pair_indices(int(i), w)
                except (NoForwardSimplex, NoBackwardSimplex):
                    ok = False
                    break
            good += ok
        return good / len(points)

    return ResolutionReport(
        boundary_condition_ok=boundary_ok,
        delta_le_r=bool(cloud.delta <= params.r),
        delta_ge_r=bool(cloud.delta >= params.r),
        interior_covering=covering(deep),
        near_boundary_covering=covering(near),
        n_interior_checked=len(deep),
        n_near_boundary_checked=len(near),
    )
