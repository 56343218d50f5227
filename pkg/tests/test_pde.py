import numpy as np
import pytest
import scipy.sparse as sp

from cloudfd.eigen import DirectionFan, max_eigenvalue, min_eigenvalue, sampled_eigenvalue
from cloudfd.meshes import build_regular_grid
from cloudfd.pde import (
    CONE_TIPS,
    EllipticProblem,
    GridFunction,
    convex_envelope_oracle,
    convex_envelope_residual,
    double_cone,
    pucci_exact,
    pucci_residual,
    segment_distance,
)
from cloudfd.solvers import SolverConfig, combination_solve, euler_solve, newton_solve
from cloudfd.stencils import preprocess_cloud

from conftest import disc_mesh

DOMAIN = ((-1.0, -1.0), (1.0, 1.0))


@pytest.fixture(scope="module")
def grid17():
    cloud = build_regular_grid(17, domain=DOMAIN, rho=2)
    return cloud, preprocess_cloud(cloud)


@pytest.fixture(scope="module")
def grid25r3():
    cloud = build_regular_grid(25, domain=DOMAIN, rho=3)
    return cloud, preprocess_cloud(cloud)


@pytest.fixture(scope="module")
def disc():
    cloud = disc_mesh(0.18)
    return cloud, preprocess_cloud(cloud, dtheta=0.9)


def full_interior_mask(cloud, engine):
    m = np.zeros(cloud.n_points, dtype=bool)
    m[engine.interior] = True
    return m


def deep_indices(cloud, count, rng, margin):
    d = cloud.distance_to_boundary()
    cands = np.where(d >= margin)[0]
    return rng.choice(cands, size=min(count, len(cands)), replace=False)


# --- closed-form data functions ---


def test_double_cone_values(rng):
    assert double_cone(CONE_TIPS[0]) == 0.0
    assert double_cone(CONE_TIPS[1]) == 0.0
    assert double_cone(np.zeros(2)) == pytest.approx(3.0 / 7.0, abs=1e-15)
    pts = rng.uniform(-1, 1, size=(40, 2))
    want = np.minimum(
        np.hypot(pts[:, 0] + 3 / 7, pts[:, 1]), np.hypot(pts[:, 0] - 3 / 7, pts[:, 1])
    )
    np.testing.assert_allclose(double_cone(pts), want, atol=1e-14)


def test_double_cone_custom_tips():
    v = double_cone(np.array([0.0, 0.0]), p1=(-1.0, 0.0), p2=(5.0, 0.0))
    assert v == pytest.approx(1.0)


def test_segment_distance_minorizes_cone(rng):
    pts = rng.uniform(-1, 1, size=(200, 2))
    seg = segment_distance(pts)
    cone = double_cone(pts)
    assert np.all(seg <= cone + 1e-14)
    outside = np.abs(pts[:, 0]) >= 3.0 / 7.0
    np.testing.assert_allclose(seg[outside], cone[outside], atol=1e-14)
    on_axis = np.column_stack([rng.uniform(-3 / 7, 3 / 7, 20), np.zeros(20)])
    np.testing.assert_allclose(segment_distance(on_axis), 0.0, atol=1e-15)


def test_pucci_exact_values():
    assert pucci_exact(np.array([-1.0, -1.0])) == pytest.approx(-1.0 / np.sqrt(2.0))
    assert pucci_exact(np.array([0.0, 0.0])) == pytest.approx(-1.0 / (2.0 * np.sqrt(2.0)))
    assert pucci_exact(np.array([-1.0, -1.0]), alpha=3.0) == pytest.approx(-0.5)


def test_pucci_exact_solves_extremal_equation(rng):
    """alpha * lmax(D^2 u) + lmin(D^2 u) vanishes, by a difference Hessian."""
    eps = 1e-4
    for alpha in (2.0, 3.0):
        for _ in range(10):
            x = rng.uniform(-0.9, 0.9, size=2)
            H = np.empty((2, 2))
            for a in range(2):
                for b in range(2):
                    pp = x.copy(); pp[a] += eps; pp[b] += eps
                    pm = x.copy(); pm[a] += eps; pm[b] -= eps
                    mp = x.copy(); mp[a] -= eps; mp[b] += eps
                    mm = x.copy(); mm[a] -= eps; mm[b] -= eps
                    H[a, b] = (
                        pucci_exact(pp, alpha)
                        - pucci_exact(pm, alpha)
                        - pucci_exact(mp, alpha)
                        + pucci_exact(mm, alpha)
                    ) / (4.0 * eps * eps)
            lam = np.linalg.eigvalsh(0.5 * (H + H.T))
            assert alpha * lam[-1] + lam[0] == pytest.approx(0.0, abs=1e-5)


# --- GridFunction ---


def test_grid_function_validation(grid17):
    cloud, _ = grid17
    with pytest.raises(ValueError):
        GridFunction(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        GridFunction(np.array([1.0, np.nan]))
    gf = GridFunction.sample(double_cone, cloud)
    np.testing.assert_array_equal(gf.values, double_cone(cloud.points))
    assert gf.check_matches(cloud) is gf
    with pytest.raises(ValueError):
        GridFunction(np.zeros(5)).check_matches(cloud)


def test_grid_function_accepted_by_residual(grid17, rng):
    cloud, st = grid17
    u = rng.standard_normal(cloud.n_points)
    g = double_cone(cloud.points)
    prob = EllipticProblem("convex_envelope", cloud, st, GridFunction(g))
    np.testing.assert_array_equal(prob.residual(GridFunction(u)), prob.residual(u))


# --- residual structure ---


def test_problem_validation(grid17):
    cloud, st = grid17
    g = double_cone(cloud.points)
    with pytest.raises(ValueError):
        EllipticProblem("monge_ampere", cloud, st, g)
    with pytest.raises(ValueError):
        EllipticProblem("pucci", cloud, st, g, alpha=0.0)
    with pytest.raises(ValueError):
        EllipticProblem("pucci", cloud, st, g[:-1])
    bad = g.copy()
    bad[3] = np.nan
    with pytest.raises(ValueError):
        EllipticProblem("pucci", cloud, st, bad)


def test_boundary_rows_are_data_mismatch(grid17, rng):
    cloud, st = grid17
    g = pucci_exact(cloud.points)
    u = rng.standard_normal(cloud.n_points)
    bd = cloud.boundary_mask
    for kind in ("convex_envelope", "pucci"):
        prob = EllipticProblem(kind, cloud, st, g)
        r = prob.residual(u)
        np.testing.assert_array_equal(r[bd], (u - g)[bd])
        u2 = u.copy()
        u2[~bd] += rng.standard_normal((~bd).sum())
        np.testing.assert_array_equal(prob.residual(u2)[bd], (u2 - g)[bd])


def test_pucci_residual_zero_on_constants(grid17, disc):
    for cloud, st in (grid17, disc):
        g = np.full(cloud.n_points, 0.7)
        prob = EllipticProblem("pucci", cloud, st, g)
        r = prob.residual(np.full(cloud.n_points, 0.7))
        # matvec paths sum w_i * u and u * sum(w_i) in different orders
        assert np.abs(r).max() < 1e-12


def test_pucci_saddle_balances_at_alpha_one(grid17):
    cloud, st = grid17
    u = cloud.points[:, 0] ** 2 - cloud.points[:, 1] ** 2
    prob = EllipticProblem("pucci", cloud, st, u, alpha=1.0)
    r = prob.residual(u)
    full = full_interior_mask(cloud, prob.engine)
    np.testing.assert_allclose(r[full], 0.0, atol=1e-11)
    # ring points read the saddle through a sampled fan; small but not exact
    ring = ~full & ~cloud.boundary_mask
    assert np.abs(r[ring]).max() < 0.1


def test_envelope_residual_zero_on_convex_data(grid17, disc):
    A = np.array([[1.6, 0.3], [0.3, 1.2]])
    for cloud, st in (grid17, disc):
        g = 0.5 * np.einsum("ni,ij,nj->n", cloud.points, A, cloud.points)
        prob = EllipticProblem("convex_envelope", cloud, st, g)
        assert np.all(prob.residual(g) == 0.0)


def test_residuals_match_scalar_eigenvalues(grid17, rng):
    """Full-stencil rows agree with the per-point extremal eigenvalue API."""
    cloud, st = grid17
    u = rng.standard_normal(cloud.n_points)
    g = double_cone(cloud.points)
    ce = EllipticProblem("convex_envelope", cloud, st, g).residual(u)
    pu = EllipticProblem("pucci", cloud, st, g, alpha=2.0).residual(u)
    for i in deep_indices(cloud, 12, rng, margin=0.3):
        lo = min_eigenvalue(u, i, st)
        hi = max_eigenvalue(u, i, st)
        assert ce[i] == pytest.approx(max(u[i] - g[i], -lo), abs=1e-9)
        assert pu[i] == pytest.approx(-(2.0 * hi + lo), abs=1e-9)


def test_ring_values_stay_inside_exact_envelope(grid17, rng):
    cloud, st = grid17
    prob = EllipticProblem("pucci", cloud, st, np.zeros(cloud.n_points))
    full = full_interior_mask(cloud, prob.engine)
    ring = np.where(~full & ~cloud.boundary_mask)[0]
    for _ in range(3):
        u = rng.standard_normal(cloud.n_points)
        lmin, lmax = prob.engine.extremes(u)
        for i in ring:
            assert lmax[i] <= max_eigenvalue(u, i, st) + 1e-9
            assert lmin[i] >= min_eigenvalue(u, i, st) - 1e-9
            assert lmin[i] <= lmax[i]


def test_cloud_engine_matches_sampled_fan(disc, rng):
    cloud, st = disc
    k = 32
    ang = np.pi * np.arange(k) / k
    fan = DirectionFan(np.column_stack([np.cos(ang), np.sin(ang)]), np.pi / k)
    prob = EllipticProblem("pucci", cloud, st, np.zeros(cloud.n_points), n_dirs=k)
    u = rng.standard_normal(cloud.n_points)
    lmin, lmax = prob.engine.extremes(u)
    for i in deep_indices(cloud, 8, rng, margin=0.45):
        assert lmax[i] == pytest.approx(sampled_eigenvalue(u, i, st, fan, "max"), abs=1e-10)
        assert lmin[i] == pytest.approx(sampled_eigenvalue(u, i, st, fan, "min"), abs=1e-10)


# --- degenerate ellipticity ---


@pytest.mark.parametrize("kind", ["convex_envelope", "pucci"])
@pytest.mark.parametrize("scheme", ["interp", "nn"])
def test_grid_residual_degenerate_ellipticity(grid17, rng, kind, scheme):
    """Raising any other point never raises the residual; raising the center
    never lowers it."""
    cloud, st = grid17
    g = double_cone(cloud.points)
    prob = EllipticProblem(kind, cloud, st, g, scheme=scheme)
    interior = np.where(~cloud.boundary_mask)[0]
    for _ in range(15):
        u = rng.standard_normal(cloud.n_points)
        r0 = prob.residual(u)
        i = rng.choice(interior)
        j = rng.integers(cloud.n_points - 1)
        j += j >= i
        up = u.copy()
        up[j] += rng.uniform(0.1, 2.0)
        assert prob.residual(up)[i] <= r0[i] + 1e-12
        uc = u.copy()
        uc[i] += rng.uniform(0.1, 2.0)
        assert prob.residual(uc)[i] >= r0[i] - 1e-12


@pytest.mark.parametrize("kind", ["convex_envelope", "pucci"])
@pytest.mark.parametrize("scheme", ["interp", "nn"])
def test_cloud_residual_degenerate_ellipticity(disc, rng, kind, scheme):
    cloud, st = disc
    g = double_cone(cloud.points)
    prob = EllipticProblem(kind, cloud, st, g, scheme=scheme, n_dirs=16)
    interior = np.where(~cloud.boundary_mask)[0]
    for _ in range(10):
        u = rng.standard_normal(cloud.n_points)
        r0 = prob.residual(u)
        i = rng.choice(interior)
        j = rng.integers(cloud.n_points - 1)
        j += j >= i
        up = u.copy()
        up[j] += rng.uniform(0.1, 2.0)
        assert prob.residual(up)[i] <= r0[i] + 1e-12
        uc = u.copy()
        uc[i] += rng.uniform(0.1, 2.0)
        assert prob.residual(uc)[i] >= r0[i] - 1e-12


# --- semi-smooth jacobians ---


@pytest.mark.parametrize("kind", ["convex_envelope", "pucci"])
def test_grid_jacobian_matches_finite_differences(grid17, rng, kind):
    cloud, st = grid17
    g = double_cone(cloud.points)
    prob = EllipticProblem(kind, cloud, st, g)
    u = 0.3 * cloud.points[:, 0] ** 2 + 0.5 * cloud.points[:, 1] ** 2
    u += 0.01 * rng.standard_normal(cloud.n_points)
    J = prob.jacobian(u).toarray()
    eps = 1e-7
    for k in rng.choice(cloud.n_points, 12, replace=False):
        up = u.copy(); up[k] += eps
        dn = u.copy(); dn[k] -= eps
        col = (prob.residual(up) - prob.residual(dn)) / (2.0 * eps)
        np.testing.assert_allclose(J[:, k], col, atol=2e-5)


@pytest.mark.parametrize("kind", ["convex_envelope", "pucci"])
def test_cloud_jacobian_matches_finite_differences(disc, rng, kind):
    cloud, st = disc
    g = double_cone(cloud.points)
    prob = EllipticProblem(kind, cloud, st, g, n_dirs=24)
    u = 0.4 * cloud.points[:, 0] ** 2 + 0.6 * cloud.points[:, 1] ** 2
    u += 0.01 * rng.standard_normal(cloud.n_points)
    J = prob.jacobian(u).toarray()
    eps = 1e-7
    for k in rng.choice(cloud.n_points, 10, replace=False):
        up = u.copy(); up[k] += eps
        dn = u.copy(); dn[k] -= eps
        col = (prob.residual(up) - prob.residual(dn)) / (2.0 * eps)
        np.testing.assert_allclose(J[:, k], col, atol=2e-5)


def test_lipschitz_is_max_abs_row_sum(grid17, rng):
    cloud, st = grid17
    prob = EllipticProblem("pucci", cloud, st, double_cone(cloud.points))
    u = rng.standard_normal(cloud.n_points)
    J = prob.jacobian(u)
    want = float(np.abs(J.toarray()).sum(axis=1).max())
    assert prob.lipschitz(u) == pytest.approx(want, rel=1e-12)


def test_initial_guess_is_copy_of_data(grid17):
    cloud, st = grid17
    g = double_cone(cloud.points)
    prob = EllipticProblem("pucci", cloud, st, g)
    u0 = prob.initial_guess()
    np.testing.assert_array_equal(u0, g)
    u0[0] += 1.0
    assert prob.g[0] == g[0]


# --- nearest-neighbor scheme ---


def nn_table_oracle(u, i, table, strides):
    """Direct second differences over the table's +- offset pairs."""
    slot = {tuple(off): s for s, off in enumerate(table.offsets_idx)}
    vals = []
    for s_f, off in enumerate(table.offsets_idx):
        s_b = slot.get(tuple(-off))
        if s_b is None or s_b < s_f:
            continue
        t = np.linalg.norm(table.offsets_phys[s_f])
        uf = u[i + int(off @ strides)]
        ub = u[i + int(table.offsets_idx[s_b] @ strides)]
        vals.append((uf + ub - 2.0 * u[i]) / t**2)
    return min(vals), max(vals)


def test_nn_grid_matches_two_point_oracle(grid17, rng):
    cloud, st = grid17
    prob = EllipticProblem("pucci", cloud, st, np.zeros(cloud.n_points), scheme="nn")
    u = rng.standard_normal(cloud.n_points)
    lmin, lmax = prob.engine.extremes(u)
    for i in np.where(~cloud.boundary_mask)[0][::17]:
        lo, hi = nn_table_oracle(u, i, st.table_for(i), st.strides)
        assert lmax[i] == pytest.approx(hi, abs=1e-12)
        assert lmin[i] == pytest.approx(lo, abs=1e-12)


def test_nn_bracketed_by_interpolation_on_grid(grid17, rng):
    """Two-point lattice values are chord endpoints of the interpolation
    optimization, so the NN extremes are inner bounds."""
    cloud, st = grid17
    interp = EllipticProblem("pucci", cloud, st, np.zeros(cloud.n_points))
    nn = EllipticProblem("pucci", cloud, st, np.zeros(cloud.n_points), scheme="nn")
    full = full_interior_mask(cloud, interp.engine)
    for _ in range(3):
        u = rng.standard_normal(cloud.n_points)
        lmin_i, lmax_i = interp.engine.extremes(u)
        lmin_n, lmax_n = nn.engine.extremes(u)
        assert np.all(lmax_n[full] <= lmax_i[full] + 1e-12)
        assert np.all(lmin_n[full] >= lmin_i[full] - 1e-12)


def test_nn_cloud_matches_snap_oracle(disc, rng):
    cloud, st = disc
    k = 12
    prob = EllipticProblem("pucci", cloud, st, np.zeros(cloud.n_points), scheme="nn", n_dirs=k)
    u = rng.standard_normal(cloud.n_points)
    lmin, lmax = prob.engine.extremes(u)
    pk = st.pack
    for i in deep_indices(cloud, 5, rng, margin=0.45):
        vals = []
        for ang in np.pi * np.arange(k) / k:
            w = np.array([np.cos(ang), np.sin(ang)])
            kp, km = st.select_all(w, candidates=np.array([i]))
            if kp[0] < 0 or km[0] < 0:
                continue
            ends = []
            for row, sign in ((kp[0], 1.0), (km[0], -1.0)):
                best = None
                for v in pk.vertices[row]:
                    off = cloud.points[v] - cloud.points[i]
                    t = np.linalg.norm(off)
                    score = off @ (sign * w) / t
                    if best is None or score > best[0]:
                        best = (score, v, t)
                ends.append(best)
            (_, vf, tf), (_, vb, tb) = ends
            vals.append(2.0 * ((u[vf] - u[i]) / tf + (u[vb] - u[i]) / tb) / (tf + tb))
        assert lmax[i] == pytest.approx(max(vals), abs=1e-12)
        assert lmin[i] == pytest.approx(min(vals), abs=1e-12)


# --- one-shot helpers ---


def test_one_shot_residual_helpers(grid17, rng):
    cloud, st = grid17
    g = double_cone(cloud.points)
    u = rng.standard_normal(cloud.n_points)
    ce_prob = EllipticProblem("convex_envelope", cloud, st, g)
    np.testing.assert_array_equal(
        convex_envelope_residual(u, g, cloud, st), ce_prob.residual(u)
    )
    np.testing.assert_array_equal(
        convex_envelope_residual(u, g, cloud, st, problem=ce_prob), ce_prob.residual(u)
    )
    pu_prob = EllipticProblem("pucci", cloud, st, g, alpha=3.0)
    np.testing.assert_array_equal(
        pucci_residual(u, 3.0, g, cloud, st), pu_prob.residual(u)
    )


# --- end-to-end solves ---


def test_pucci_newton_converges_to_exact_solution(grid25r3):
    cloud, st = grid25r3
    g = pucci_exact(cloud.points)
    prob = EllipticProblem("pucci", cloud, st, g, alpha=2.0)
    u, rep = newton_solve(prob.residual, prob.jacobian, prob.initial_guess(),
                          SolverConfig(tol=1e-9))
    assert rep.converged
    assert rep.newton_steps <= 10
    err = np.abs(u - g).max()
    assert err < 2.5e-3


def test_envelope_newton_respects_obstacle_and_minorant(grid25r3):
    cloud, st = grid25r3
    g = double_cone(cloud.points)
    prob = EllipticProblem("convex_envelope", cloud, st, g)
    u, rep = newton_solve(prob.residual, prob.jacobian, prob.initial_guess(),
                          SolverConfig(tol=1e-9))
    assert rep.converged
    assert np.all(u <= g + 1e-9)
    assert np.all(u >= segment_distance(cloud.points) - 0.08)


def test_three_solvers_agree_on_pucci(grid17):
    cloud, st = grid17
    g = pucci_exact(cloud.points)
    prob = EllipticProblem("pucci", cloud, st, g, alpha=2.0)
    tol = 1e-7
    u_n, _ = newton_solve(prob.residual, prob.jacobian, prob.initial_guess(),
                          SolverConfig(tol=tol))
    u_e, _ = euler_solve(prob.residual, prob.initial_guess(),
                         SolverConfig(tol=tol), lipschitz=prob.lipschitz)
    u_c, _ = combination_solve(prob.residual, prob.jacobian, prob.initial_guess(),
                               SolverConfig(tol=tol, deterministic=True),
                               lipschitz=prob.lipschitz)
    assert np.abs(u_n - u_e).max() < 10 * tol
    assert np.abs(u_n - u_c).max() < 10 * tol


# --- fine-grid envelope oracle ---


def test_oracle_reproduces_convex_data_exactly():
    cloud = build_regular_grid(9, domain=DOMAIN, rho=2)

    def bowl(pts):
        return 0.8 * pts[..., 0] ** 2 + 0.6 * pts[..., 1] ** 2

    vals = convex_envelope_oracle(cloud, g_fn=bowl, factor=4)
    np.testing.assert_allclose(vals, bowl(cloud.points), atol=1e-8)


def test_oracle_bounds_and_tip_contact():
    cloud = build_regular_grid(17, domain=DOMAIN, rho=2)
    vals = convex_envelope_oracle(cloud, factor=4)
    assert np.all(vals <= double_cone(cloud.points) + 1e-9)
    assert np.all(vals >= segment_distance(cloud.points) - 5e-3)
    i = np.argmin(np.abs(cloud.points - CONE_TIPS[1]).sum(axis=1))
    assert vals[i] < 0.05


def test_oracle_resolution_is_converged():
    """Doubling the reference lattice barely moves reported solve errors."""
    cloud = build_regular_grid(17, domain=DOMAIN, rho=2)
    st = preprocess_cloud(cloud)
    g = double_cone(cloud.points)
    prob = EllipticProblem("convex_envelope", cloud, st, g)
    u, _ = newton_solve(prob.residual, prob.jacobian, prob.initial_guess(),
                        SolverConfig(tol=1e-9))
    e4 = np.abs(u - convex_envelope_oracle(cloud, factor=4)).max()
    e8 = np.abs(u - convex_envelope_oracle(cloud, factor=8)).max()
    assert abs(e4 - e8) <= 0.1 * e8
