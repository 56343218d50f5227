import numpy as np
import pytest
from scipy.spatial import Delaunay

from cloudfd.errors import ParseError, TopologyError
from cloudfd.meshes import (
    PointCloud,
    augment_boundary,
    build_regular_grid,
    read_mesh,
    rotate_cloud,
    write_mesh,
)


def octagon_fan():
    """Center point plus 8 points on the unit circle, triangulated as a fan."""
    ang = np.linspace(0.0, 2 * np.pi, 9)[:-1]
    pts = np.vstack([[0.0, 0.0], np.column_stack([np.cos(ang), np.sin(ang)])])
    cells = [(0, 1 + k, 1 + (k + 1) % 8) for k in range(8)]
    mask = np.array([False] + [True] * 8)
    return PointCloud(pts, mask, cells=np.array(cells))


def delaunay_cloud(rng, n=40):
    pts = rng.uniform(-1.0, 1.0, size=(n, 2))
    tri = Delaunay(pts)
    mask = np.zeros(n, dtype=bool)
    mask[np.unique(tri.convex_hull)] = True
    return PointCloud(pts, mask, cells=tri.simplices)


def test_grid_center_point_has_8_neighbors():
    cloud = build_regular_grid(3, rho=1)
    center = 4
    assert cloud.adjacency[center].nnz == 8
    assert not cloud.boundary_mask[center]
    assert cloud.boundary_mask.sum() == 8


def test_grid_metrics_equal_spacing():
    cloud = build_regular_grid(9, domain=((-1, -1), (1, 1)), rho=2)
    s = 2.0 / 8.0
    assert cloud.h == pytest.approx(s, abs=1e-15)
    assert cloud.ell == pytest.approx(s, abs=1e-15)
    assert cloud.h_B == pytest.approx(s, abs=1e-15)
    assert cloud.delta == pytest.approx(s, abs=1e-15)


def test_grid_requires_enough_points():
    with pytest.raises(ValueError):
        build_regular_grid(6, rho=3)


def test_grid_chebyshev_adjacency_and_perimeter():
    cloud = build_regular_grid(7, rho=2)
    center = cloud.n_points // 2
    assert cloud.adjacency[center].nnz == 24
    assert (cloud.adjacency != cloud.adjacency.T).nnz == 0
    seg = cloud.boundary_edges
    assert len(seg) == 24  # 4 * (7 - 1) perimeter segments
    lengths = np.linalg.norm(cloud.points[seg[:, 0]] - cloud.points[seg[:, 1]], axis=1)
    assert np.allclose(lengths, cloud.grid.spacing)


def test_square_with_two_triangles_has_five_edges():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    cells = np.array([[0, 1, 3], [0, 3, 2]])
    cloud = PointCloud(pts, np.ones(4, dtype=bool), cells=cells)
    assert cloud.adjacency.nnz == 10  # 5 undirected edges
    assert cloud.ell == pytest.approx(1.0)
    assert len(cloud.boundary_edges) == 4


def test_unflagged_boundary_facet_point_is_rejected():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    cells = np.array([[0, 1, 3], [0, 3, 2]])
    with pytest.raises(TopologyError):
        PointCloud(pts, np.array([True, True, True, False]), cells=cells)


def test_roundtrip_identity(tmp_path, rng):
    cloud = delaunay_cloud(rng)
    path = tmp_path / "cloud.msh"
    write_mesh(cloud, path)
    back = read_mesh(path)
    assert np.array_equal(back.points, cloud.points)
    assert np.array_equal(back.boundary_mask, cloud.boundary_mask)
    assert np.array_equal(back.cells, cloud.cells)
    for name in ("h", "h_B", "delta", "ell"):
        assert getattr(back, name) == pytest.approx(getattr(cloud, name), rel=1e-12)


def test_parse_error_reports_line(tmp_path):
    bad = tmp_path / "bad.msh"
    bad.write_text(
        "DIM 2\nPOINTS 3\n0 0\n1 0\n0 1\nBOUNDARY 3\n0\n1\n2\nCELLS 1\n0 1 oops\n"
    )
    with pytest.raises(ParseError) as err:
        read_mesh(bad)
    assert err.value.line == 11

    (tmp_path / "trunc.msh").write_text("DIM 2\nPOINTS 2\n0 0\n")
    with pytest.raises(ParseError):
        read_mesh(tmp_path / "trunc.msh")

    (tmp_path / "hdr.msh").write_text("DIMENSION 2\n")
    with pytest.raises(ParseError):
        read_mesh(tmp_path / "hdr.msh")


def test_comments_and_shared_lines_are_tolerated(tmp_path):
    path = tmp_path / "c.msh"
    path.write_text(
        "# a comment\nDIM 2\nPOINTS 4  # trailing\n0 0\n1 0\n0 1\n1 1\n"
        "BOUNDARY 4\n0 1 2 3\nCELLS 2\n0 1 3\n0 3 2\n"
    )
    cloud = read_mesh(path)
    assert cloud.n_points == 4
    assert cloud.boundary_mask.all()


def test_missing_point_reference_is_topology_error(tmp_path):
    path = tmp_path / "t.msh"
    path.write_text(
        "DIM 2\nPOINTS 3\n0 0\n1 0\n0 1\nBOUNDARY 3\n0\n1\n2\nCELLS 1\n0 1 99\n"
    )
    with pytest.raises(TopologyError):
        read_mesh(path)


def test_augment_boundary_quarters_the_gaps():
    cloud = octagon_fan()
    target = cloud.h_B / 4.0
    fine = augment_boundary(cloud, target)
    assert fine.boundary_mask.sum() >= 32
    assert fine.h_B <= target * (1.0 + 1e-12)
    assert fine.h_B == pytest.approx(cloud.h_B / 4.0, rel=1e-12)
    # interior points and triangulation untouched
    assert np.array_equal(fine.points[: cloud.n_points], cloud.points)
    assert np.array_equal(fine.cells, cloud.cells)
    assert not fine.boundary_mask[0]
    # already fine enough -> same object
    assert augment_boundary(fine, target) is fine


def test_augmented_cloud_roundtrips(tmp_path):
    fine = augment_boundary(octagon_fan(), 0.2)
    path = tmp_path / "aug.msh"
    write_mesh(fine, path)
    back = read_mesh(path)
    assert np.array_equal(back.points, fine.points)
    assert back.h_B == pytest.approx(fine.h_B, rel=1e-12)
    assert len(back.boundary_edges) == len(fine.boundary_edges)


def test_rotate_preserves_distances_and_metrics(rng):
    cloud = delaunay_cloud(rng, n=60)
    rot = rotate_cloud(cloud, 0.7)
    i, j = rng.integers(0, cloud.n_points, size=(2, 50))
    d0 = np.linalg.norm(cloud.points[i] - cloud.points[j], axis=1)
    d1 = np.linalg.norm(rot.points[i] - rot.points[j], axis=1)
    assert np.allclose(d0, d1, atol=1e-12)
    # recomputing the exact metrics from scratch gives the carried-over values
    fresh = PointCloud(rot.points, rot.boundary_mask, cells=rot.cells)
    assert fresh.ell == pytest.approx(cloud.ell, abs=1e-12)
    assert fresh.delta == pytest.approx(cloud.delta, abs=1e-12)
    assert fresh.h == pytest.approx(cloud.h, rel=0.1)  # sampled quantity


def test_rotate_zero_is_identity_and_quarter_turn_permutes():
    cloud = build_regular_grid(5)
    same = rotate_cloud(cloud, 0.0)
    assert np.allclose(same.points, cloud.points, atol=1e-15)
    quarter = rotate_cloud(cloud, np.pi / 2.0)
    a = np.array(sorted(map(tuple, np.round(cloud.points, 12))))
    b = np.array(sorted(map(tuple, np.round(quarter.points + 0.0, 12))))
    assert np.allclose(a, b, atol=1e-12)
    assert quarter.grid.spacing == cloud.grid.spacing
