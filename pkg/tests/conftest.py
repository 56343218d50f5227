import numpy as np
import pytest
from scipy.spatial import Delaunay

from cloudfd.geometry import SimplexFrame
from cloudfd.meshes import PointCloud


def random_frame(rng, n=2, cond_cap=1e6, origin=0):
    """Random well-conditioned simplex frame with vertex offsets of O(1) size."""
    while True:
        V = rng.standard_normal((n, n))
        V *= rng.uniform(0.5, 2.0, size=n)  # uneven column norms on purpose
        if np.linalg.cond(V) <= cond_cap:
            return SimplexFrame(origin, tuple(range(1, n + 1)), V)


def disc_mesh(spacing, jitter=0.0, seed=0):
    """Triangulated unit disc: hex-lattice interior plus a circle of boundary points.

    Interior points sit on a hexagonal lattice with the given spacing, kept a
    half-spacing clear of the circle so boundary segments stay the shortest
    edges.  Boundary point count tracks the interior spacing.
    """
    rng = np.random.default_rng(seed)
    rows = []
    dy = spacing * np.sqrt(3) / 2
    j = 0
    y = 0.0
    while y < 1.0:
        for sign in ([1.0] if j == 0 else [1.0, -1.0]):
            yy = sign * y
            x0 = 0.0 if j % 2 == 0 else spacing / 2
            xs = np.concatenate(
                [np.arange(x0, 1.0, spacing), np.arange(x0 - spacing, -1.0, -spacing)]
            )
            rows.append(np.column_stack([xs, np.full(xs.size, yy)]))
        j += 1
        y = j * dy
    interior = np.concatenate(rows)
    if jitter:
        interior = interior + rng.uniform(-jitter, jitter, interior.shape) * spacing
    keep = np.linalg.norm(interior, axis=1) <= 1.0 - 0.55 * spacing
    interior = interior[keep]
    m_b = int(np.ceil(2 * np.pi / spacing))
    ang = np.linspace(0.0, 2 * np.pi, m_b, endpoint=False)
    boundary = np.column_stack([np.cos(ang), np.sin(ang)])
    points = np.concatenate([interior, boundary])
    mask = np.zeros(len(points), dtype=bool)
    mask[len(interior):] = True
    cells = Delaunay(points).simplices
    return PointCloud(points, mask, cells=cells)


def jittered_square(spacing, jitter=0.0, seed=0):
    """Lattice cloud on [-1,1]^2 with interior points shaken off their nodes.

    jitter is in units of the spacing; the boundary ring stays exact so the
    hull matches the flags.  With jitter 0 this is a lattice fed through the
    generic triangulated-cloud path instead of the grid fast path.
    """
    m = round(2.0 / spacing) + 1
    xs = np.linspace(-1.0, 1.0, m)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.column_stack(np.unravel_index(np.arange(m * m), (m, m)))
    interior = np.all((idx > 0) & (idx < m - 1), axis=1)
    if jitter:
        rng = np.random.default_rng(seed)
        pts[interior] += rng.uniform(
            -jitter, jitter, (int(interior.sum()), 2)
        ) * spacing
    cells = Delaunay(pts).simplices
    return PointCloud(pts, ~interior, cells=cells)


@pytest.fixture
def rng():
    return np.random.default_rng(20260821)
