"""Figure rendering for CLI report paths.

Every plotting helper writes a PNG next to the delimited output it
illustrates and returns the path.  Uses the Agg backend so the CLI works
headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from forestnav.tta import CostMap
from forestnav.trajopt import LatticePlan
from forestnav.worldgen import World
from forestnav import curves


def _extent_of(world: World):
    L, W, _ = world.extent
    return (0.0, L, 0.0, W)


def plot_world(world: World, path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 6))
    im = ax.imshow(
        world.heightmap, origin="lower", extent=_extent_of(world), cmap="terrain"
    )
    fig.colorbar(im, ax=ax, label="elevation (m)")
    for x, y, radius, _ in world.trees:
        ax.add_patch(plt.Circle((x, y), radius, color="saddlebrown"))
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(f"world seed={world.seed}, {world.trees.shape[0]} trees")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_costmap(cm: CostMap, path, log_scale=True) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(12, 5))
    ny, nx = cm.shape
    extent = (
        cm.origin[0], cm.origin[0] + nx * cm.cell_size,
        cm.origin[1], cm.origin[1] + ny * cm.cell_size,
    )
    shown = np.log10(cm.c_map + 1e-6) if log_scale else cm.c_map
    im0 = axes[0].imshow(shown, origin="lower", extent=extent, cmap="magma")
    fig.colorbar(im0, ax=axes[0], label="log10 cost" if log_scale else "cost")
    axes[0].set_title("combined cost")
    im1 = axes[1].imshow(cm.d_t, origin="lower", extent=extent, cmap="viridis")
    fig.colorbar(im1, ax=axes[1], label="obstacle distance (m)")
    axes[1].set_title("distance field")
    for ax in axes:
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_plan(cm: CostMap, plan: LatticePlan, path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 6))
    ny, nx = cm.shape
    extent = (
        cm.origin[0], cm.origin[0] + nx * cm.cell_size,
        cm.origin[1], cm.origin[1] + ny * cm.cell_size,
    )
    ax.imshow(np.log10(cm.c_map + 1e-6), origin="lower", extent=extent, cmap="magma")
    x0, y0, _ = plan.pose
    ax.plot(x0, y0, "c^", markersize=9, label="start")
    ax.plot(plan.goal[0], plan.goal[1], "g*", markersize=12, label="goal")
    for i in range(plan.p_e.shape[0]):
        color = "lime" if i == plan.best_index else "white"
        ax.plot(plan.p_e[i, 0], plan.p_e[i, 1], "o", color=color, markersize=5)
        ax.annotate(f"{plan.c[i]:.1f}", plan.p_e[i], color=color, fontsize=7)
    ts = np.linspace(0, plan.trajectory.t_e, 60)
    pos, _ = curves.eval(plan.trajectory, ts)
    ax.plot(pos[:, 0], pos[:, 1], "-", color="lime", linewidth=2, label="best")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_episode(world: World, trace, path) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(12, 5.5))
    ax = axes[0]
    ax.imshow(world.heightmap, origin="lower", extent=_extent_of(world),
              cmap="terrain", alpha=0.8)
    for x, y, radius, _ in world.trees:
        ax.add_patch(plt.Circle((x, y), radius, color="saddlebrown"))
    xs = [row.x for row in trace.rows]
    ys = [row.y for row in trace.rows]
    ax.plot(xs, ys, "r-", linewidth=1.8, label="executed")
    ax.plot(xs[0], ys[0], "c^", markersize=9, label="start")
    ax.plot(*trace.goal, "g*", markersize=13, label="goal")
    ax.set_title(f"termination: {trace.termination}")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")

    ax = axes[1]
    ts = [row.t for row in trace.rows]
    ax.plot(ts, [row.v for row in trace.rows], label="v (m/s)")
    ax.plot(ts, [row.w for row in trace.rows], label="w (rad/s)")
    clear = [row.clearance for row in trace.rows]
    if np.all(np.isfinite(clear)):
        ax.plot(ts, clear, label="clearance (m)")
    ax.set_xlabel("t (s)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_tracking(rows: np.ndarray, path, title="") -> Path:
    """rows: (n, 9) array of t, x, y, theta, ref_x, ref_y, ref_theta, v, w."""
    fig, axes = plt.subplots(1, 2, figsize=(12, 5))
    axes[0].plot(rows[:, 4], rows[:, 5], "k--", label="reference")
    axes[0].plot(rows[:, 1], rows[:, 2], "r-", label="executed")
    axes[0].axis("equal")
    axes[0].legend(fontsize=8)
    axes[0].set_xlabel("x (m)")
    axes[0].set_ylabel("y (m)")
    axes[0].set_title(title)
    err = np.hypot(rows[:, 1] - rows[:, 4], rows[:, 2] - rows[:, 5])
    axes[1].plot(rows[:, 0], err)
    axes[1].set_xlabel("t (s)")
    axes[1].set_ylabel("position error (m)")
    axes[1].grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
