"""Figure rendering for the report paths.

PNG files land next to the delimited output; the CSV/JSON artifacts remain
the canonical data. Everything draws through the Agg backend so headless
runs work.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_density_figure",
    "save_convergence_figure",
    "save_optimality_figure",
    "save_closed_loop_figure",
    "save_trajectory_figure",
    "save_prediction_figure",
]

_RC = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 130,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 10,
}


def _new_axes():
    plt.rcParams.update(_RC)
    fig, ax = plt.subplots()
    return fig, ax


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_density_figure(path, grid, density, atoms=None, title="filtered spectral density"):
    fig, ax = _new_axes()
    ax.plot(grid, np.real(density), lw=1.2, label="density (re)")
    if atoms:
        thetas = [a.theta for a in atoms]
        weights = [abs(complex(a.weight)) for a in atoms]
        scale = max(np.max(np.abs(np.real(density))), 1e-12)
        ax.vlines(thetas, 0, scale, color="tab:red", lw=1.0, alpha=0.7)
        for t, w in zip(thetas, weights):
            ax.annotate(f"{w:.3g}", (t, scale), fontsize=8, ha="center", va="bottom")
    ax.set_xlabel(r"$\theta$")
    ax.set_ylabel("density")
    ax.set_title(title)
    if atoms:
        ax.legend(["density (re)", "atoms"], fontsize=8)
    _finish(fig, path)


def save_convergence_figure(path, orders, errors, title="weak-metric error vs order"):
    fig, ax = _new_axes()
    orders = np.asarray(orders, dtype=float)
    errors = np.asarray(errors, dtype=float)
    ax.loglog(orders, np.maximum(errors, 1e-300), "o-", lw=1.2)
    ref = errors[0] * orders[0] / orders
    ax.loglog(orders, ref, "--", color="gray", lw=1.0, label="1/N reference")
    ax.set_xlabel("correlation order N")
    ax.set_ylabel("weak error")
    ax.set_title(title)
    ax.legend(fontsize=8)
    _finish(fig, path)


def save_optimality_figure(path, sizes, gaps, title="optimality gap vs data size"):
    fig, ax = _new_axes()
    ax.semilogx(sizes, gaps, "o-", lw=1.2)
    ax.set_xlabel("data size (replicates per base state)")
    ax.set_ylabel(r"$|J_N - J^*|$")
    ax.set_title(title)
    _finish(fig, path)


def save_closed_loop_figure(path, result, title="closed loop"):
    traj = result.trajectory
    steps = np.arange(len(traj))
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 5.0))
    plt.rcParams.update(_RC)
    ax1.plot(steps, traj.xs[:, 0], lw=1.2, label="x")
    ax1.plot(steps, traj.mus[:, 0], lw=1.0, ls="--", label="mu")
    ax1.set_ylabel("state")
    ax1.legend(fontsize=8)
    ax1.grid(alpha=0.3)
    controls = np.array([res.u_star[0] for res in result.step_results])
    ax2.step(np.arange(len(controls)), controls, where="post", lw=1.2, color="tab:orange")
    ax2.set_ylabel("u*")
    ax2.set_xlabel("step")
    ax2.grid(alpha=0.3)
    fig.suptitle(title)
    _finish(fig, path)


def save_trajectory_figure(path, trajectories, title="trajectories"):
    fig, ax = _new_axes()
    for traj in trajectories[:32]:
        ax.plot(np.arange(len(traj)), traj.xs[:, 0], lw=0.8, alpha=0.6)
    ax.set_xlabel("step")
    ax.set_ylabel("x[0]")
    ax.set_title(title)
    _finish(fig, path)


def save_prediction_figure(path, steps, predicted, truth=None, title="spectral prediction"):
    fig, ax = _new_axes()
    predicted = np.asarray(predicted)
    ax.plot(steps, predicted.real, "o-", lw=1.2, label="predicted (re)")
    if np.max(np.abs(predicted.imag)) > 1e-9:
        ax.plot(steps, predicted.imag, "s-", lw=1.0, label="predicted (im)")
    if truth is not None:
        truth = np.asarray(truth)
        ax.plot(steps, truth.real, "--", color="gray", lw=1.0, label="truth (re)")
    ax.set_xlabel("t")
    ax.set_ylabel("E[g(y_t)]")
    ax.set_title(title)
    ax.legend(fontsize=8)
    _finish(fig, path)
