"""Static SVG figures: team snapshots and per-cycle metric curves.

Snapshots follow one marker convention: target samples are small green
dots, initial positions blue crosses, final positions red squares and
trajectories thin black lines.  Every artist carries a ``gid`` so tests and
downstream tools can find the marks in the SVG tree.  Output is byte-stable:
the SVG hash salt is fixed and the date metadata is dropped.
"""
from __future__ import annotations

import xml.etree.ElementTree as ET

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_NS = "{http://www.w3.org/2000/svg}"
_RC = {"svg.hashsalt": "distmatch", "svg.fonttype": "none", "path.simplify": False}


def _save(fig, path):
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def emit_snapshot(trajectory, targets, path, bounds=None, title=None):
    """Write a snapshot SVG.

    ``trajectory`` is ``(T, M, d)`` with planar positions in the first two
    state components; ``T = 1`` draws the starting crosses only.  An empty
    team (``M = 0``) draws the targets alone.
    """
    traj = np.asarray(trajectory, dtype=float)
    if traj.ndim != 3:
        raise ValueError("trajectory must have shape (T, M, d)")
    pts = np.asarray(targets.points, dtype=float)
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 6))
        ax.scatter(pts[:, 0], pts[:, 1], s=4, c="tab:green", marker="o", linewidths=0, gid="targets")
        m = traj.shape[1]
        if m:
            for i in range(m):
                if traj.shape[0] > 1:
                    ax.plot(traj[:, i, 0], traj[:, i, 1], color="black", lw=0.5, gid=f"trajectory-{i}")
            start = traj[0]
            ax.scatter(start[:, 0], start[:, 1], s=30, c="tab:blue", marker="x", gid="initial")
            if traj.shape[0] > 1:
                end = traj[-1]
                ax.scatter(end[:, 0], end[:, 1], s=30, facecolors="none", edgecolors="tab:red",
                           marker="s", gid="final")
        if bounds is not None:
            ax.set_xlim(bounds[0], bounds[2])
            ax.set_ylim(bounds[1], bounds[3])
        ax.set_aspect("equal")
        if title:
            ax.set_title(title)
        _save(fig, path)


def emit_metrics_figure(rows, path, title=None):
    """Cycle-wise square roots of psi at both boundaries, with the exact W2."""
    cycles = np.array([r.cycle for r in rows], dtype=float)
    start = np.sqrt([max(r.psi_start, 0.0) for r in rows])
    end = np.sqrt([max(r.psi_end, 0.0) for r in rows])
    w2 = np.array([r.w2 for r in rows])
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(cycles, start, "o-", color="tab:blue", label="sqrt psi, cycle start", gid="psi-start")
        ax.plot(cycles, end, "s-", color="tab:red", label="sqrt psi, cycle end", gid="psi-end")
        ax.plot(cycles, w2, "D", color="goldenrod", label="W2 at cycle end", gid="w2")
        bad = [r.cycle for r in rows if not r.bound_ok]
        if bad:
            ax.plot(bad, [w2[list(cycles).index(c)] for c in bad], "kx", ms=9,
                    label="bound flag false", gid="bound-false")
        ax.set_xlabel("cycle")
        ax.set_ylabel("distance")
        if len(rows) and np.all(np.concatenate([start, end, w2]) > 0):
            ax.set_yscale("log")
        ax.legend()
        if title:
            ax.set_title(title)
        _save(fig, path)


def count_marks(svg_text, gid):
    """Number of drawn marks inside the group ``gid`` of a snapshot SVG."""
    root = ET.fromstring(svg_text)
    for g in root.iter(f"{_NS}g"):
        if g.get("id") == gid:
            uses = list(g.iter(f"{_NS}use"))
            return len(uses) if uses else sum(1 for _ in g.iter(f"{_NS}path"))
    return 0


def count_trajectories(svg_text):
    root = ET.fromstring(svg_text)
    return sum(1 for g in root.iter(f"{_NS}g") if (g.get("id") or "").startswith("trajectory-"))
