import resource
import time

import numpy as np

from cloudfd.meshes import build_regular_grid
from cloudfd.pde import EllipticProblem, pucci_exact
from cloudfd.solvers import SolverConfig, newton_solve
from cloudfd.stencils import preprocess_cloud

cfg = SolverConfig(tol=1e-8)
prev = None
t_all = time.perf_counter()
for m in (35, 49, 68, 96, 134, 201):
    t0 = time.perf_counter()
    cloud = build_regular_grid(m, rho=3)
    st = preprocess_cloud(cloud)
    g = pucci_exact(cloud.points, alpha=2.0)
    prob = EllipticProblem("pucci", cloud, st, g, alpha=2.0, scheme="interp")
    u, rep = newton_solve(prob.residual, prob.jacobian, prob.initial_guess(), cfg)
    err = float(np.abs(u - pucci_exact(cloud.points, alpha=2.0)).max())
    h = 2.0 / (m - 1)
    rate = np.log(prev[1] / err) / np.log(prev[0] / h) if prev else float("nan")
    prev = (h, err)
    rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1e6
    print(
        f"m={m:4d} h={h:.4e} N={cloud.points.shape[0]:6d} err={err:.4e} "
        f"rate={rate:6.3f} newton={rep.newton_steps} t={time.perf_counter()-t0:6.1f}s rss={rss:.2f}GB",
        flush=True,
    )
print(f"total {time.perf_counter()-t_all:.1f}s")
