"""Figure rendering for the CLI sweep reports.

Each helper takes the row dicts a subcommand is about to write as CSV and
draws the matching picture next to it.  Uses the Agg backend so the CLI
works headless.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finite(rows, xkey, ykey):
    xs, ys = [], []
    for r in rows:
        x, y = r.get(xkey), r.get(ykey)
        if isinstance(x, (int, float)) and isinstance(y, (int, float)):
            xs.append(float(x))
            ys.append(float(y))
    return np.array(xs), np.array(ys)


def convergence_figure(path, rows, title):
    h, err = _finite(rows, "h", "error")
    fig, ax = plt.subplots(figsize=(4.6, 3.5))
    if len(h):
        ax.loglog(h, err, "o-", color="tab:blue")
        if len(h) > 1:
            slope = np.polyfit(np.log(h), np.log(err), 1)[0]
            ax.set_title(f"{title} (fitted order {slope:.2f})")
        else:
            ax.set_title(title)
    else:
        ax.set_title(title)
    ax.set_xlabel("h")
    ax.set_ylabel("max error")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def rotation_figure(path, rows, title):
    ang, err = _finite(rows, "angle", "error")
    fig, ax = plt.subplots(figsize=(4.6, 3.5))
    if len(ang):
        ax.plot(ang, err, "o-", color="tab:blue")
        ax.axhline(err.mean(), color="tab:gray", lw=0.8, ls="--")
    ax.set_xlabel("rotation angle")
    ax.set_ylabel("max error")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def bench_figure(path, rows, title):
    solvers = []
    for r in rows:
        s = r.get("solver")
        if isinstance(r.get("N"), int) and s not in solvers:
            solvers.append(s)
    fig, ax = plt.subplots(figsize=(4.6, 3.5))
    for s in solvers:
        pts = [(r["N"], r["seconds"]) for r in rows
               if r.get("solver") == s and isinstance(r.get("N"), int)
               and isinstance(r.get("seconds"), float)]
        if pts:
            n, sec = zip(*sorted(pts))
            ax.loglog(n, sec, "o-", label=s)
    ax.set_xlabel("N")
    ax.set_ylabel("seconds")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    if solvers:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
