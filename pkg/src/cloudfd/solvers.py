"""Nonlinear solvers for monotone residual operators.

Three drivers share one contract: F maps an iterate to its residual
vector, jacobian_of_F returns the active-branch sparse linearization, and
the residual is oriented so that u <- u - dt F[u] is a descent step.

euler_solve is the slow guaranteed-descent baseline, newton_solve the
fast local method, and combination_solve retries Newton after spending an
equivalent amount of work on damped steps whenever a Newton step fails
the sufficient-decrease test, which keeps it globally convergent without
giving up the local rate.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import splu

from .errors import LinearSolveFailure, NonConverged


@dataclass
class SolverConfig:
    tol: float = 1e-8
    max_iters: int = 400000
    euler_dt: float = 0.9
    sufficient_decrease: float = 0.999
    deterministic: bool = False
    lipschitz_refresh: int = 50

    def __post_init__(self):
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")
        if not 0.0 < self.sufficient_decrease < 1.0:
            raise ValueError("sufficient_decrease must lie in (0, 1)")


@dataclass
class SolverReport:
    iterations: int = 0
    newton_steps: int = 0
    euler_steps: int = 0
    residual_history: list = field(default_factory=list)
    wall_times: dict = field(default_factory=lambda: {"newton": 0.0, "euler": 0.0})
    converged: bool = False
    best_u: np.ndarray = None


def _factorize(J):
    # rows keep only their active branch, so the pattern is unsymmetric;
    # COLAMD fills far less than the A+A^T orderings here
    try:
        lu = splu(J.tocsc(), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise LinearSolveFailure(f"sparse factorization failed: {exc}") from exc
    return lu


def _newton_step(F, jacobian_of_F, u, r):
    lu = _factorize(jacobian_of_F(u))
    delta = lu.solve(-r)
    if not np.all(np.isfinite(delta)):
        raise LinearSolveFailure("direct solve produced non-finite update")
    return u + delta, lu


def _flop_budget(lu, n):
    """Euler steps costing about as much as one factorize-and-solve."""
    nnz = lu.L.nnz + lu.U.nnz
    newton_cost = 8.0 * nnz + 60.0 * n
    euler_cost = 60.0 * n
    return max(1, int(round(newton_cost / euler_cost)))


def euler_solve(F, u0, cfg, lipschitz=None):
    """Damped explicit iteration u <- u - dt F[u].

    With a lipschitz callable, dt = cfg.euler_dt / K where K is the
    current row-sum bound, refreshed every cfg.lipschitz_refresh steps;
    without one, cfg.euler_dt is used as an absolute step.
    """
    u = np.array(u0, dtype=float)
    report = SolverReport()
    best_r = np.inf
    dt = cfg.euler_dt
    t0 = time.perf_counter()
    for it in range(cfg.max_iters):
        if lipschitz is not None and it % cfg.lipschitz_refresh == 0:
            dt = cfg.euler_dt / lipschitz(u)
        r = F(u)
        rn = float(np.abs(r).max())
        report.residual_history.append(rn)
        report.iterations += 1
        report.euler_steps += 1
        if rn < best_r:
            best_r = rn
            report.best_u = u.copy()
        if rn <= cfg.tol:
            report.converged = True
            report.wall_times["euler"] = time.perf_counter() - t0
            return u, report
        u = u - dt * r
    report.wall_times["euler"] = time.perf_counter() - t0
    raise NonConverged(
        f"no convergence in {cfg.max_iters} damped steps (best {best_r:.3e})",
        report=report,
    )


def newton_solve(F, jacobian_of_F, u0, cfg):
    """Semi-smooth Newton: solve J delta = -F[u] on the active branches."""
    u = np.array(u0, dtype=float)
    report = SolverReport()
    best_r = np.inf
    t0 = time.perf_counter()
    for _ in range(cfg.max_iters):
        r = F(u)
        rn = float(np.abs(r).max())
        report.residual_history.append(rn)
        report.iterations += 1
        if rn < best_r:
            best_r = rn
            report.best_u = u.copy()
        if rn <= cfg.tol:
            report.converged = True
            report.wall_times["newton"] = time.perf_counter() - t0
            return u, report
        u, _ = _newton_step(F, jacobian_of_F, u, r)
        report.newton_steps += 1
    report.wall_times["newton"] = time.perf_counter() - t0
    raise NonConverged(
        f"no convergence in {cfg.max_iters} Newton steps (best {best_r:.3e})",
        report=report,
    )


def combination_solve(F, jacobian_of_F, u0, cfg, lipschitz=None):
    """Newton with an equal-work damped fallback.

    Each rejected Newton step is followed by damped steps matched to the
    cost of that Newton step: by measured wall time normally, by an
    operation-count estimate when cfg.deterministic is set.
    """
    u = np.array(u0, dtype=float)
    report = SolverReport()
    best_r = np.inf
    theta = cfg.sufficient_decrease
    dt = cfg.euler_dt
    euler_since_refresh = 0

    def note(rn, v):
        nonlocal best_r
        report.residual_history.append(rn)
        if rn < best_r:
            best_r = rn
            report.best_u = v.copy()

    while report.iterations < cfg.max_iters:
        r0 = F(u)
        rn0 = float(np.abs(r0).max())
        note(rn0, u)
        report.iterations += 1
        if rn0 <= cfg.tol:
            report.converged = True
            return u, report

        t0 = time.perf_counter()
        u_try, lu = _newton_step(F, jacobian_of_F, u, r0)
        r1 = F(u_try)
        t_newton = time.perf_counter() - t0
        report.wall_times["newton"] += t_newton

        if r1 @ r1 <= theta * (r0 @ r0):
            u = u_try
            report.newton_steps += 1
            continue

        budget = _flop_budget(lu, len(u)) if cfg.deterministic else None
        t1 = time.perf_counter()
        done = 0
        while report.iterations < cfg.max_iters:
            if lipschitz is not None and euler_since_refresh % cfg.lipschitz_refresh == 0:
                dt = cfg.euler_dt / lipschitz(u)
            euler_since_refresh += 1
            r = F(u)
            rn = float(np.abs(r).max())
            note(rn, u)
            report.iterations += 1
            report.euler_steps += 1
            done += 1
            if rn <= cfg.tol:
                report.wall_times["euler"] += time.perf_counter() - t1
                report.converged = True
                return u, report
            u = u - dt * r
            if budget is not None:
                if done >= budget:
                    break
            elif time.perf_counter() - t1 >= t_newton:
                break
        report.wall_times["euler"] += time.perf_counter() - t1

    raise NonConverged(
        f"no convergence in {cfg.max_iters} combined steps (best {best_r:.3e})",
        report=report,
    )
