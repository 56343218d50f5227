"""Point clouds: regular-grid construction, mesh file IO, boundary refinement.

A PointCloud bundles coordinates, a boundary flag per point, the optional
triangulation it came from, and the derived resolution metrics (h, h_B,
delta, ell).  The metrics are always computed here, never accepted from the
caller, so every downstream consumer sees consistent numbers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import ParseError, TopologyError


@dataclass(frozen=True)
class GridInfo:
    """Lattice structure of a regular grid cloud (possibly rotated)."""

    shape: tuple          # points per axis
    spacing: float
    lattice: np.ndarray   # (n, n) columns = lattice step vectors
    rho: int              # stencil radius in Chebyshev lattice distance
    lo: np.ndarray
    hi: np.ndarray


def _edges_from_cells(cells):
    """All vertex pairs occurring in a cell, as a deduplicated (m, 2) array."""
    cells = np.asarray(cells)
    n1 = cells.shape[1]
    pairs = []
    for a in range(n1):
        for b in range(a + 1, n1):
            pairs.append(cells[:, [a, b]])
    e = np.concatenate(pairs, axis=0)
    e.sort(axis=1)
    return np.unique(e, axis=0)


def _boundary_facets(cells):
    """Facets ((n-1)-simplices) used by exactly one cell."""
    cells = np.asarray(cells)
    n1 = cells.shape[1]
    f = []
    for drop in range(n1):
        keep = [k for k in range(n1) if k != drop]
        f.append(cells[:, keep])
    f = np.concatenate(f, axis=0)
    f = np.sort(f, axis=1)
    uniq, counts = np.unique(f, axis=0, return_counts=True)
    return uniq[counts == 1]


def _chain_boundary(points, boundary_mask, cells):
    """Boundary segment list, splitting facet segments at interposed boundary points.

    Augmented clouds carry boundary points that sit on a facet segment without
    belonging to any cell; they subdivide that segment.  A flagged point lying
    on no boundary facet at all is a topology error.
    """
    facets = _boundary_facets(cells)
    if facets.shape[1] != 2:
        # 3-D surface facets: keep the raw triangle edges as segments
        return _edges_from_cells(facets)
    on_facet = np.zeros(len(points), dtype=bool)
    on_facet[facets.ravel()] = True
    extra = np.flatnonzero(boundary_mask & ~on_facet)
    if extra.size == 0:
        return facets
    scale = np.linalg.norm(points.max(axis=0) - points.min(axis=0))
    segments = []
    claimed = np.zeros(len(extra), dtype=bool)
    for a, b in facets:
        pa, pb = points[a], points[b]
        d = pb - pa
        L2 = d @ d
        ts = ((points[extra] - pa) @ d) / L2
        off = points[extra] - (pa + np.outer(ts, d))
        on_seg = (np.linalg.norm(off, axis=1) < 1e-9 * scale) & (ts > 0) & (ts < 1)
        idx = np.flatnonzero(on_seg)
        chain = [a] + [extra[k] for k in idx[np.argsort(ts[idx])]] + [b]
        claimed[idx] = True
        segments.extend(zip(chain[:-1], chain[1:]))
    if not claimed.all():
        missing = extra[~claimed]
        raise TopologyError(f"boundary points {missing.tolist()} lie on no boundary facet")
    return np.array(segments, dtype=int)


def _boundary_loops(segments):
    """Order boundary segments into closed loops (2-D only)."""
    nbrs = {}
    for a, b in segments:
        nbrs.setdefault(int(a), []).append(int(b))
        nbrs.setdefault(int(b), []).append(int(a))
    for p, ns in nbrs.items():
        if len(ns) != 2:
            raise TopologyError(f"boundary point {p} has {len(ns)} boundary segments, expected 2")
    loops = []
    seen = set()
    for start in sorted(nbrs):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        prev, cur = None, start
        while True:
            nxt = [q for q in nbrs[cur] if q != prev]
            step = nxt[0] if prev is not None else min(nbrs[cur])
            if step == start:
                break
            loop.append(step)
            seen.add(step)
            prev, cur = cur, step
        loops.append(loop)
    return loops


class PointCloud:
    """Immutable-by-convention container for a discretized domain.

    Parameters are raw data; resolution metrics are computed on construction:

    - ell: exact minimum edge length of the adjacency graph
    - h: covering radius of the interior (grid spacing on lattices, sampled
      on a ~10x finer auxiliary lattice otherwise; the sampled value is a
      lower bound of the true supremum)
    - h_B: maximal gap between adjacent boundary points
    - delta: minimum distance from any interior point to the boundary polyline
    """

    def __init__(self, points, boundary_mask, cells=None, boundary_edges=None, grid=None):
        self.points = np.ascontiguousarray(points, dtype=float)
        self.boundary_mask = np.asarray(boundary_mask, dtype=bool)
        if self.points.ndim != 2:
            raise ValueError("points must be an (N, n) array")
        if self.boundary_mask.shape != (len(self.points),):
            raise ValueError("boundary_mask must have one flag per point")
        self.cells = None if cells is None else np.asarray(cells, dtype=int)
        self.grid = grid
        self.dim = self.points.shape[1]

        if self.cells is not None:
            if self.cells.size and self.cells.max() >= len(self.points):
                raise TopologyError("cell references a missing point")
            facet_pts = np.zeros(len(self.points), dtype=bool)
            facet_pts[_boundary_facets(self.cells).ravel()] = True
            if np.any(facet_pts & ~self.boundary_mask):
                raise TopologyError("triangulation boundary facet touches an unflagged point")
            if boundary_edges is None:
                boundary_edges = _chain_boundary(self.points, self.boundary_mask, self.cells)
        if boundary_edges is None and grid is not None:
            boundary_edges = self._grid_boundary_edges()
        if boundary_edges is None:
            raise ValueError("need cells, a grid structure, or explicit boundary edges")
        self.boundary_edges = np.asarray(boundary_edges, dtype=int)

        self._adjacency = None
        self._compute_metrics()

    # -- derived structure ------------------------------------------------

    @property
    def n_points(self):
        return len(self.points)

    @property
    def interior_indices(self):
        return np.flatnonzero(~self.boundary_mask)

    @property
    def boundary_indices(self):
        return np.flatnonzero(self.boundary_mask)

    @property
    def adjacency(self):
        """Symmetric 0/1 CSR adjacency.  Built on first use; grids can be large."""
        if self._adjacency is None:
            if self.grid is not None:
                self._adjacency = self._grid_adjacency()
            else:
                edges = np.unique(np.sort(self._edge_list(), axis=1), axis=0)
                n = self.n_points
                data = np.ones(2 * len(edges), dtype=np.int8)
                rows = np.concatenate([edges[:, 0], edges[:, 1]])
                cols = np.concatenate([edges[:, 1], edges[:, 0]])
                self._adjacency = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
        return self._adjacency

    def _grid_adjacency(self):
        g = self.grid
        shape = g.shape
        n = self.n_points
        idx = np.arange(n, dtype=np.int64).reshape(shape)
        rho = g.rho
        rows, cols = [], []
        ndim = len(shape)
        for off in np.ndindex(*(2 * rho + 1,) * ndim):
            off = tuple(o - rho for o in off)
            if all(o == 0 for o in off):
                continue
            src = idx[tuple(slice(max(0, -o), s - max(0, o)) for o, s in zip(off, shape))]
            dst = idx[tuple(slice(max(0, o), s + min(0, o)) for o, s in zip(off, shape))]
            rows.append(src.ravel())
            cols.append(dst.ravel())
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        return sp.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))

    def _edge_list(self):
        parts = [self.boundary_edges]
        if self.cells is not None and self.cells.size:
            parts.append(_edges_from_cells(self.cells))
        return np.concatenate(parts)

    def _grid_boundary_edges(self):
        if self.dim != 2:
            return np.empty((0, 2), dtype=int)
        m0, m1 = self.grid.shape
        idx = np.arange(self.n_points).reshape(self.grid.shape)
        loop = np.concatenate([
            idx[0, :-1], idx[:-1, -1], idx[-1, :0:-1], idx[:0:-1, 0],
        ])
        return np.column_stack([loop, np.roll(loop, -1)])

    # -- metrics ----------------------------------------------------------

    def _compute_metrics(self):
        pts = self.points
        if self.grid is not None:
            s = self.grid.spacing
            self.ell = s
            self.h = s
            self.h_B = s
            self.delta = s
            return
        edges = self._edge_list()
        lengths = np.linalg.norm(pts[edges[:, 0]] - pts[edges[:, 1]], axis=1)
        self.ell = float(lengths.min())
        seg = self.boundary_edges
        self.h_B = float(
            np.linalg.norm(pts[seg[:, 0]] - pts[seg[:, 1]], axis=1).max()
        )
        d2b = self.distance_to_boundary()
        interior = d2b[~self.boundary_mask]
        self.delta = float(interior.min()) if interior.size else 0.0
        self.h = self._sampled_covering_radius()

    def distance_to_boundary(self):
        """Per-point distance to the boundary polyline (0 on boundary points)."""
        d = getattr(self, "_d2b", None)
        if d is None:
            if self.grid is not None:
                shape = np.asarray(self.grid.shape)
                idx = np.column_stack(
                    np.unravel_index(np.arange(self.n_points), self.grid.shape)
                )
                depth = np.minimum(idx, shape[None, :] - 1 - idx).min(axis=1)
                d = depth * self.grid.spacing
            else:
                pts = self.points
                d = np.full(self.n_points, np.inf)
                for a, b in self.boundary_edges:
                    pa, seg = pts[a], pts[b] - pts[a]
                    L2 = seg @ seg
                    if L2 == 0.0:
                        continue
                    t = np.clip(((pts - pa) @ seg) / L2, 0.0, 1.0)
                    dist = np.linalg.norm(pts - (pa + np.outer(t, seg)), axis=1)
                    np.minimum(d, dist, out=d)
                d[self.boundary_mask] = 0.0
            self._d2b = d
        return d

    def _sampled_covering_radius(self):
        pts = self.points
        if self.dim != 2:
            # TODO: tet-based membership test for 3-D unstructured clouds
            samples = self._bbox_samples()
        else:
            from matplotlib.path import Path

            try:
                loops = _boundary_loops(self.boundary_edges)
            except TopologyError:
                # open boundary chain: fall back to box sampling
                loops = []
            paths = [Path(pts[loop + [loop[0]]]) for loop in loops]
            samples = self._bbox_samples()
            if paths:
                inside = np.zeros(len(samples), dtype=bool)
                for p in paths:
                    inside |= p.contains_points(samples)
                samples = samples[inside]
        if len(samples) == 0:
            samples = pts
        tree = cKDTree(pts)
        d, _ = tree.query(samples, k=1)
        return float(d.max())

    def _bbox_samples(self, cap=1_500_000):
        pts = self.points
        tree = cKDTree(pts)
        d, _ = tree.query(pts, k=2)
        step = float(np.median(d[:, 1])) / 10.0
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        # cap total sample count; the 10x refinement is already overkill
        # for a covering-radius estimate on large clouds
        min_step = (np.prod(hi - lo) / cap) ** (1.0 / self.dim)
        step = max(step, float(min_step))
        axes = [np.arange(lo[k], hi[k] + step / 2, step) for k in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])


def build_regular_grid(side_points, domain=((-1.0, -1.0), (1.0, 1.0)), rho=2):
    """Axis-aligned lattice cloud on a box with Chebyshev-rho adjacency.

    side_points is the point count per axis and must be at least 2*rho + 1 so
    that at least one point carries a full uncut stencil.  The outermost
    lattice layer is the boundary.
    """
    lo = np.asarray(domain[0], dtype=float)
    hi = np.asarray(domain[1], dtype=float)
    n = len(lo)
    if side_points < 2 * rho + 1:
        raise ValueError(f"need side_points >= {2 * rho + 1} for rho={rho}")
    spacings = (hi - lo) / (side_points - 1)
    if not np.allclose(spacings, spacings[0], rtol=1e-12):
        raise ValueError("domain box must give equal spacing on every axis")
    s = float(spacings[0])
    axes = [np.linspace(lo[k], hi[k], side_points) for k in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.column_stack([m.ravel() for m in mesh])
    ii = np.indices((side_points,) * n).reshape(n, -1)
    boundary = np.any((ii == 0) | (ii == side_points - 1), axis=0)
    grid = GridInfo(
        shape=(side_points,) * n,
        spacing=s,
        lattice=s * np.eye(n),
        rho=rho,
        lo=lo,
        hi=hi,
    )
    return PointCloud(points, boundary, grid=grid)


def augment_boundary(cloud, target_h_B):
    """Subdivide boundary segments until no gap exceeds target_h_B.

    Interior points and the triangulation are untouched; the new points lie on
    the existing boundary polyline (chords are not re-projected onto any
    underlying curve).
    """
    if cloud.h_B <= target_h_B * (1.0 + 1e-12):
        return cloud
    pts = list(cloud.points)
    new_segments = []
    for a, b in cloud.boundary_edges:
        pa, pb = cloud.points[a], cloud.points[b]
        L = np.linalg.norm(pb - pa)
        # the -1e-9 keeps an exact multiple from splitting one piece too far
        k = int(np.ceil(L / target_h_B - 1e-9))
        if k <= 1:
            new_segments.append((a, b))
            continue
        chain = [a]
        for j in range(1, k):
            pts.append(pa + (j / k) * (pb - pa))
            chain.append(len(pts) - 1)
        chain.append(b)
        new_segments.extend(zip(chain[:-1], chain[1:]))
    points = np.array(pts)
    mask = np.zeros(len(points), dtype=bool)
    mask[: cloud.n_points] = cloud.boundary_mask
    mask[cloud.n_points:] = True
    return PointCloud(
        points, mask, cells=cloud.cells,
        boundary_edges=np.array(new_segments, dtype=int),
    )


def rotate_cloud(cloud, angle):
    """Rigidly rotate a 2-D cloud about the origin.

    All distance-based metrics are rigid-motion invariants, so they carry
    over unchanged; lattice structure rotates with the points.
    """
    if cloud.dim != 2:
        raise ValueError("rotate_cloud handles 2-D clouds only")
    c, s = np.cos(angle), np.sin(angle)
    Q = np.array([[c, -s], [s, c]])
    grid = cloud.grid
    if grid is not None:
        grid = GridInfo(
            shape=grid.shape, spacing=grid.spacing, lattice=Q @ grid.lattice,
            rho=grid.rho, lo=grid.lo, hi=grid.hi,
        )
    out = PointCloud.__new__(PointCloud)
    out.points = cloud.points @ Q.T
    out.boundary_mask = cloud.boundary_mask.copy()
    out.cells = None if cloud.cells is None else cloud.cells.copy()
    out.boundary_edges = cloud.boundary_edges.copy()
    out.grid = grid
    out.dim = 2
    out._adjacency = None
    out.ell = cloud.ell
    out.h = cloud.h
    out.h_B = cloud.h_B
    out.delta = cloud.delta
    return out


# -- mesh file format ----------------------------------------------------
#
#   DIM n
#   POINTS k        followed by k lines of n floats
#   BOUNDARY m      followed by m point indices
#   CELLS c         followed by c lines of n+1 indices
#
# '#' starts a comment, full-line or trailing; indices are 0-based.


def _tokens(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def _take(stream, what):
    try:
        return next(stream)
    except StopIteration:
        raise ParseError(f"unexpected end of file while reading {what}") from None


def _header(stream, keyword):
    lineno, tok = _take(stream, f"{keyword} header")
    if len(tok) != 2 or tok[0] != keyword:
        raise ParseError(f"expected '{keyword} <count>'", line=lineno)
    try:
        count = int(tok[1])
    except ValueError:
        raise ParseError(f"bad {keyword} count {tok[1]!r}", line=lineno) from None
    if count < 0:
        raise ParseError(f"negative {keyword} count", line=lineno)
    return count


def read_mesh(path):
    """Parse the text mesh format into a PointCloud."""
    stream = _tokens(path)
    lineno, tok = _take(stream, "DIM header")
    if len(tok) != 2 or tok[0] != "DIM":
        raise ParseError("expected 'DIM <n>'", line=lineno)
    try:
        dim = int(tok[1])
    except ValueError:
        raise ParseError(f"bad dimension {tok[1]!r}", line=lineno) from None
    if dim < 1:
        raise ParseError("dimension must be positive", line=lineno)

    k = _header(stream, "POINTS")
    points = np.empty((k, dim))
    for i in range(k):
        lineno, tok = _take(stream, "point coordinates")
        if len(tok) != dim:
            raise ParseError(f"expected {dim} coordinates, got {len(tok)}", line=lineno)
        try:
            points[i] = [float(t) for t in tok]
        except ValueError:
            raise ParseError(f"bad coordinate in {tok!r}", line=lineno) from None

    m = _header(stream, "BOUNDARY")
    bnd = []
    while len(bnd) < m:
        lineno, tok = _take(stream, "boundary indices")
        for t in tok:
            try:
                bnd.append(int(t))
            except ValueError:
                raise ParseError(f"bad boundary index {t!r}", line=lineno) from None
    if len(bnd) > m:
        raise ParseError(f"BOUNDARY section holds more than {m} indices", line=lineno)

    c = _header(stream, "CELLS")
    cells = np.empty((c, dim + 1), dtype=int)
    for i in range(c):
        lineno, tok = _take(stream, "cell indices")
        if len(tok) != dim + 1:
            raise ParseError(f"expected {dim + 1} cell indices, got {len(tok)}", line=lineno)
        try:
            cells[i] = [int(t) for t in tok]
        except ValueError:
            raise ParseError(f"bad cell index in {tok!r}", line=lineno) from None

    bnd = np.asarray(bnd, dtype=int)
    if bnd.size and (bnd.min() < 0 or bnd.max() >= k):
        raise TopologyError("boundary index out of range")
    if c and (cells.min() < 0 or cells.max() >= k):
        raise TopologyError("cell references a missing point")
    mask = np.zeros(k, dtype=bool)
    mask[bnd] = True
    return PointCloud(points, mask, cells=cells)


def write_mesh(cloud, path):
    """Write a cloud in the text mesh format (full float precision)."""
    if cloud.cells is None:
        raise ValueError("cannot write a cloud without a triangulation")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"DIM {cloud.dim}\n")
        fh.write(f"POINTS {cloud.n_points}\n")
        for p in cloud.points:
            fh.write(" ".join(repr(float(x)) for x in p) + "\n")
        bnd = cloud.boundary_indices
        fh.write(f"BOUNDARY {len(bnd)}\n")
        for i in bnd:
            fh.write(f"{i}\n")
        fh.write(f"CELLS {len(cloud.cells)}\n")
        for cell in cloud.cells:
            fh.write(" ".join(str(int(v)) for v in cell) + "\n")
