"""Command-line harness: convergence sweeps, rotation studies, solver timing,
and cloud resolution checks.

Subcommands emit an RFC-4180 CSV table on stdout or to --out PATH; with
--out set, a figure of the same table is rendered next to it as PATH with
a .png suffix.  Exit codes: 0 clean run, 1 at least one solve failed
(rows marked FAILED), 2 bad configuration or unreadable input.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from .errors import CloudFdError, NoBackwardSimplex, NoForwardSimplex
from .geometry import SearchParams
from .meshes import build_regular_grid, read_mesh, rotate_cloud
from .pde import EllipticProblem, convex_envelope_oracle, double_cone, pucci_exact
from .solvers import SolverConfig, combination_solve, euler_solve, newton_solve
from .stencils import preprocess_cloud, validate_resolution

SOLVERS = ("euler", "newton", "combo")
KINDS = {"ce": "convex_envelope", "pucci": "pucci"}


def _int_list(text):
    try:
        return [int(tok) for tok in text.split(",") if tok]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text!r}")


def _float_list(text):
    try:
        return [float(tok) for tok in text.split(",") if tok]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _emit(rows, header, args, figure=None, title=""):
    """Write the CSV table; alongside a file, render the figure too."""
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(r.get(k)) for k in header])
        if figure is not None:
            from . import plots

            getattr(plots, figure)(Path(args.out).with_suffix(".png"), rows, title)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(k)) for k in header])


def _run_solver(prob, solver, cfg):
    u0 = prob.initial_guess()
    if solver == "euler":
        return euler_solve(prob.residual, u0, cfg, lipschitz=prob.lipschitz)
    if solver == "newton":
        return newton_solve(prob.residual, prob.jacobian, u0, cfg)
    return combination_solve(prob.residual, prob.jacobian, u0, cfg,
                             lipschitz=prob.lipschitz)


def _mesh_stencils(cloud, args):
    dtheta = args.dtheta or (cloud.h / 2.0) ** (1.0 / 3.0)
    return preprocess_cloud(cloud, dtheta=dtheta)


def _build_problem(cloud, stencils, args):
    if args.problem == "pucci":
        g = pucci_exact(cloud.points, args.alpha)
    else:
        g = double_cone(cloud.points)
    return EllipticProblem(KINDS[args.problem], cloud, stencils, g,
                           alpha=args.alpha, scheme=args.scheme)


def _rate(prev, h, err):
    if prev is None or err is None or err <= 0.0 or prev[1] <= 0.0:
        return None
    return float(np.log(prev[1] / err) / np.log(prev[0] / h))


def cmd_converge(args):
    if bool(args.grid_n) == bool(args.mesh):
        print("converge needs exactly one of --grid-n or --mesh", file=sys.stderr)
        return 2
    cfg = SolverConfig(tol=args.tol)
    levels = []
    if args.grid_n:
        for n in args.grid_n:
            cloud = build_regular_grid(n, rho=args.radius)
            levels.append((cloud, preprocess_cloud(cloud)))
        oracle_side = 4 * (max(args.grid_n) - 1) + 1
    else:
        for path in args.mesh.split(","):
            cloud = read_mesh(path)
            levels.append((cloud, _mesh_stencils(cloud, args)))
        oracle_side = None

    # convex-envelope runs on meshes compare against a designated finer
    # solve; without --reference the last level plays that role
    ref_itp = ref_h = None
    ref_is_last = False
    if args.problem == "ce" and args.mesh:
        from scipy.interpolate import LinearNDInterpolator

        if args.reference:
            rc = read_mesh(args.reference)
            rst = _mesh_stencils(rc, args)
        else:
            ref_is_last = True
            rc, rst = levels[-1]
        rp = _build_problem(rc, rst, args)
        try:
            ru, _ = _run_solver(rp, args.solver, cfg)
        except CloudFdError as exc:
            print(f"reference solve failed: {exc}", file=sys.stderr)
            return 1
        ref_itp, ref_h = LinearNDInterpolator(rc.points, ru), rc.h

    rows, prev, failed = [], None, False
    for li, (cloud, st) in enumerate(levels):
        h, N = cloud.h, cloud.n_points
        prob = _build_problem(cloud, st, args)
        try:
            u, _ = _run_solver(prob, args.solver, cfg)
        except CloudFdError:
            rows.append({"h": h, "N": N, "error": "FAILED", "rate": None})
            prev, failed = None, True
            continue
        if args.problem == "pucci":
            err = float(np.abs(u - pucci_exact(cloud.points, args.alpha)).max())
        elif args.grid_n:
            ref = convex_envelope_oracle(cloud, side=oracle_side)
            err = float(np.abs(u - ref).max())
        elif ref_is_last and li == len(levels) - 1:
            err = None  # this level is the reference
        else:
            vals = ref_itp(cloud.points)
            keep = np.isfinite(vals) & (cloud.distance_to_boundary() >= 2.0 * ref_h)
            err = float(np.abs(u[keep] - vals[keep]).max())
        rows.append({"h": h, "N": N, "error": err, "rate": _rate(prev, h, err)})
        if err is not None:
            prev = (h, err)
    title = f"{args.problem} {args.scheme} convergence"
    _emit(rows, ["h", "N", "error", "rate"], args, "convergence_figure", title)
    return 1 if failed else 0


def cmd_rotate(args):
    if args.problem != "pucci":
        print("rotation sweeps need the exact per-angle reference that only "
              "the pucci problem provides", file=sys.stderr)
        return 2
    if args.angles:
        angles = args.angles
    else:
        angles = list(np.pi / 2.0 * np.arange(args.n_angles) / args.n_angles)
    base = build_regular_grid(args.grid_n, rho=args.radius)
    cfg = SolverConfig(tol=args.tol)
    rows, errs, failed = [], [], False
    for a in angles:
        cloud = rotate_cloud(base, a)
        prob = _build_problem(cloud, preprocess_cloud(cloud), args)
        try:
            u, _ = _run_solver(prob, args.solver, cfg)
        except CloudFdError:
            rows.append({"angle": float(a), "error": "FAILED"})
            failed = True
            continue
        err = float(np.abs(u - pucci_exact(cloud.points, args.alpha)).max())
        rows.append({"angle": float(a), "error": err})
        errs.append(err)
    if errs:
        rows.append({"angle": "mean", "error": float(np.mean(errs))})
        rows.append({"angle": "variance", "error": float(np.var(errs))})
    title = f"pucci {args.scheme} error under grid rotation"
    _emit(rows, ["angle", "error"], args, "rotation_figure", title)
    return 1 if failed else 0


def cmd_bench(args):
    solvers = [s for s in args.solver.split(",") if s]
    for s in solvers:
        if s not in SOLVERS:
            print(f"unknown solver {s!r}", file=sys.stderr)
            return 2
    cfg = SolverConfig(tol=args.tol, deterministic=args.deterministic)
    rows, failed = [], False
    series = {s: [] for s in solvers}
    for s in solvers:
        for n in args.grid_n:
            cloud = build_regular_grid(n, rho=args.radius)
            prob = _build_problem(cloud, preprocess_cloud(cloud), args)
            t0 = time.perf_counter()
            try:
                _, rep = _run_solver(prob, s, cfg)
            except CloudFdError:
                rows.append({"solver": s, "N": cloud.n_points,
                             "seconds": "FAILED", "iterations": None})
                failed = True
                continue
            dt = time.perf_counter() - t0
            rows.append({"solver": s, "N": cloud.n_points,
                         "seconds": float(dt), "iterations": rep.iterations})
            series[s].append((cloud.n_points, dt))
    for s in solvers:
        if len(series[s]) > 1:
            n, sec = np.array(series[s]).T
            slope = float(np.polyfit(np.log(n), np.log(sec), 1)[0])
            rows.append({"solver": s, "N": "slope", "seconds": slope,
                         "iterations": None})
    title = f"{args.problem} {args.scheme} solver timing"
    _emit(rows, ["solver", "N", "seconds", "iterations"], args, "bench_figure", title)
    return 1 if failed else 0


def cmd_validate(args):
    if bool(args.grid_n) == bool(args.mesh):
        print("validate needs exactly one of --grid-n or --mesh", file=sys.stderr)
        return 2
    if args.grid_n:
        cloud = build_regular_grid(args.grid_n[0], rho=args.radius)
    else:
        cloud = read_mesh(args.mesh)
        if not args.dtheta:
            print("validate --mesh needs --dtheta", file=sys.stderr)
            return 2
    st = None
    if args.dtheta:
        params = SearchParams.from_resolution(cloud.h, args.dtheta, cloud.dim,
                                              narrow=True)
    else:
        st = preprocess_cloud(cloud)
        params = st.params
    # stencil construction itself can fail when the requested resolution
    # pushes the annulus off the cloud; the report then shows zero covering
    rep = validate_resolution(cloud, params, stencils=st)
    flag = lambda b: "ok" if b else "FAIL"
    print(f"points: {cloud.n_points}  h={cloud.h:.6g}  h_B={cloud.h_B:.6g}  "
          f"delta={cloud.delta:.6g}  ell={cloud.ell:.6g}")
    print(f"radii: r={params.r:.6g}  R={params.R:.6g}  dtheta={params.dtheta:.6g}")
    print(f"boundary resolution C_n h_B <= delta tan(dtheta/2): "
          f"{flag(rep.boundary_condition_ok)}")
    print(f"delta <= r: {rep.delta_le_r}   delta >= r: {rep.delta_ge_r}")
    print(f"interior covering: {100.0 * rep.interior_covering:.1f}% "
          f"of {rep.n_interior_checked}")
    print(f"near-boundary covering: {100.0 * rep.near_boundary_covering:.1f}% "
          f"of {rep.n_near_boundary_checked}")
    if not rep.ok:
        if st is None:
            try:
                st = preprocess_cloud(cloud, params=params)
            except CloudFdError:
                bad = list(np.flatnonzero(~cloud.boundary_mask)[:20])
                print("stencil construction failed; interior points such as "
                      f"{' '.join(map(str, bad))} have empty search annuli")
                return 1
        bad = _failing_points(cloud, st)
        if bad:
            print("points without opposing stencils (first "
                  f"{len(bad)}): {' '.join(map(str, bad))}")
    return 0 if rep.ok else 1


def _failing_points(cloud, stencils, n_directions=64, cap=20):
    ang = np.linspace(0.0, 2.0 * np.pi, n_directions, endpoint=False)
    if cloud.dim == 2:
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    else:
        rng = np.random.default_rng(0)
        dirs = rng.standard_normal((n_directions, 3))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    bad = []
    for i in np.flatnonzero(~cloud.boundary_mask):
        for w in dirs:
            try:
                stencils.select_pair_indices(int(i), w)
            except (NoForwardSimplex, NoBackwardSimplex):
                bad.append(int(i))
                break
        if len(bad) >= cap:
            break
    return bad


def build_parser():
    p = argparse.ArgumentParser(
        prog="cloudfd",
        description="Monotone finite-difference solves for extremal-curvature "
                    "equations on grids and point clouds.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--problem", choices=("ce", "pucci"), default="pucci",
                        help="ce: convex envelope of the double cone; "
                             "pucci: maximal equation with exact solution")
        sp.add_argument("--alpha", type=float, default=2.0,
                        help="pucci ellipticity ratio (default 2)")
        sp.add_argument("--scheme", choices=("interp", "nn"), default="interp",
                        help="simplex interpolation or nearest-neighbor reads")
        sp.add_argument("--radius", type=int, default=3,
                        help="lattice stencil radius rho (default 3)")
        sp.add_argument("--dtheta", type=float, default=None,
                        help="angular resolution for mesh stencils "
                             "(default (h/2)^(1/3))")
        sp.add_argument("--tol", type=float, default=1e-8,
                        help="solver residual tolerance (default 1e-8)")
        sp.add_argument("--out", default=None,
                        help="CSV path; also renders a .png next to it")

    c = sub.add_parser("converge", help="error sweep over refinements")
    common(c)
    c.add_argument("--grid-n", type=_int_list, default=None,
                   help="comma list of lattice side point counts")
    c.add_argument("--mesh", default=None, help="comma list of mesh files")
    c.add_argument("--reference", default=None,
                   help="finer mesh file solved as the ce error reference")
    c.add_argument("--solver", choices=SOLVERS, default="newton")
    c.set_defaults(fn=cmd_converge)

    r = sub.add_parser("rotate", help="error versus grid rotation angle")
    common(r)
    r.add_argument("--grid-n", type=int, required=True,
                   help="lattice side point count")
    r.add_argument("--angles", type=_float_list, default=None,
                   help="comma list of rotation angles (radians)")
    r.add_argument("--n-angles", type=int, default=16,
                   help="evenly spaced angles in [0, pi/2) when --angles "
                        "is not given")
    r.add_argument("--solver", choices=SOLVERS, default="newton")
    r.set_defaults(fn=cmd_rotate)

    b = sub.add_parser("bench", help="solver wall times across sizes")
    common(b)
    b.add_argument("--grid-n", type=_int_list, required=True,
                   help="comma list of lattice side point counts")
    b.add_argument("--solver", default="euler,newton,combo",
                   help="comma list from euler,newton,combo")
    b.add_argument("--deterministic", action="store_true",
                   help="fallback budgets counted in factorization work, "
                        "not wall time")
    b.set_defaults(fn=cmd_bench)

    v = sub.add_parser("validate", help="resolution diagnostics for a cloud")
    v.add_argument("--mesh", default=None, help="mesh file to check")
    v.add_argument("--grid-n", type=_int_list, default=None,
                   help="lattice side point count")
    v.add_argument("--radius", type=int, default=3)
    v.add_argument("--dtheta", type=float, default=None)
    v.set_defaults(fn=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except OSError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except CloudFdError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
