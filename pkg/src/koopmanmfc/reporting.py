"""Delimited and JSON artifacts: writers plus the parsing inverses.

Every CSV carries a header row; floats are written with repr so parsing
returns the exact in-memory values. Writers are deterministic (no
timestamps, fixed key order), which is what makes reruns byte-identical.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .dynamics import EnsembleResult, Trajectory
from .mpc import ClosedLoopResult
from .spectral import Atom, DetectedAtoms, SpectralMeasureEstimate

__all__ = [
    "write_trajectory_csv",
    "read_trajectory_csv",
    "write_density_csv",
    "read_density_csv",
    "write_atoms_csv",
    "read_atoms_csv",
    "write_closed_loop_csv",
    "read_closed_loop_csv",
    "write_table_csv",
    "read_table_csv",
    "write_summary_json",
    "read_summary_json",
    "ensure_dir",
]


def _fmt(value: float) -> str:
    return repr(float(value))


def _open_writer(path):
    return open(path, "w", newline="")


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


def _vector_header(prefix: str, dim: int) -> list[str]:
    return [f"{prefix}{i}" for i in range(dim)]


def write_trajectory_csv(path, data: Trajectory | Sequence[Trajectory] | EnsembleResult) -> None:
    """Columns: step, particle, x*, mu*, u*, rho*."""
    if isinstance(data, Trajectory):
        trajs = [data]
    elif isinstance(data, EnsembleResult):
        trajs = data.trajectories()
    else:
        trajs = list(data)
    n = trajs[0].xs.shape[1]
    m = trajs[0].us.shape[1]
    header = (
        ["step", "particle"]
        + _vector_header("x", n)
        + _vector_header("mu", n)
        + _vector_header("u", m)
        + _vector_header("rho", m)
    )
    with _open_writer(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for p, traj in enumerate(trajs):
            for k in range(len(traj)):
                row = [k, p]
                row += [_fmt(v) for v in traj.xs[k]]
                row += [_fmt(v) for v in traj.mus[k]]
                row += [_fmt(v) for v in traj.us[k]]
                row += [_fmt(v) for v in traj.rhos[k]]
                writer.writerow(row)


def read_trajectory_csv(path) -> list[Trajectory]:
    """Inverse of write_trajectory_csv; exact for repr-formatted floats."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader]
    n = sum(1 for h in header if h.startswith("x"))
    m = sum(1 for h in header if h.startswith("u"))
    by_particle: dict[int, list[list[float]]] = {}
    for row in rows:
        p = int(row[1])
        by_particle.setdefault(p, []).append([float(v) for v in row[2:]])
    trajs = []
    for p in sorted(by_particle):
        arr = np.array(by_particle[p])
        trajs.append(
            Trajectory(
                xs=arr[:, :n],
                mus=arr[:, n : 2 * n],
                us=arr[:, 2 * n : 2 * n + m],
                rhos=arr[:, 2 * n + m :],
            )
        )
    return trajs


# ---------------------------------------------------------------------------
# Spectral artifacts
# ---------------------------------------------------------------------------


def write_density_csv(path, estimate: SpectralMeasureEstimate | tuple) -> None:
    """Columns: theta, density_re, density_im."""
    if isinstance(estimate, SpectralMeasureEstimate):
        grid, density = estimate.grid, estimate.density
    else:
        grid, density = estimate
    with _open_writer(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta", "density_re", "density_im"])
        for t, d in zip(grid, np.asarray(density, dtype=complex)):
            writer.writerow([_fmt(t), _fmt(d.real), _fmt(d.imag)])


def read_density_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [[float(v) for v in row] for row in reader]
    arr = np.array(rows)
    return arr[:, 0], arr[:, 1] + 1j * arr[:, 2]


def write_atoms_csv(path, atoms: DetectedAtoms | Sequence[Atom]) -> None:
    """Columns: theta_star, weight_re, weight_im."""
    items = list(atoms)
    with _open_writer(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta_star", "weight_re", "weight_im"])
        for atom in items:
            w = complex(atom.weight)
            writer.writerow([_fmt(atom.theta), _fmt(w.real), _fmt(w.imag)])


def read_atoms_csv(path) -> list[Atom]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [Atom(float(t), complex(float(re), float(im))) for t, re, im in reader]


# ---------------------------------------------------------------------------
# Closed loop
# ---------------------------------------------------------------------------


def write_closed_loop_csv(path, result: ClosedLoopResult) -> None:
    """Columns: step, u*, predicted_cost, realized_stage_cost, x*, mu*."""
    traj = result.trajectory
    n = traj.xs.shape[1]
    m = len(result.step_results[0].u_star) if result.step_results else traj.us.shape[1]
    header = (
        ["step"]
        + _vector_header("u_star", m)
        + ["predicted_cost", "realized_stage_cost"]
        + _vector_header("x", n)
        + _vector_header("mu", n)
    )
    with _open_writer(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k, res in enumerate(result.step_results):
            row = [k]
            row += [_fmt(v) for v in res.u_star]
            row += [_fmt(res.predicted_cost), _fmt(result.stage_costs[k])]
            row += [_fmt(v) for v in traj.xs[k]]
            row += [_fmt(v) for v in traj.mus[k]]
            writer.writerow(row)


def read_closed_loop_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    arr = np.array(rows)
    return {name: arr[:, j] for j, name in enumerate(header)}


# ---------------------------------------------------------------------------
# Generic tables and summaries
# ---------------------------------------------------------------------------


def write_table_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with _open_writer(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([_fmt(v) if isinstance(v, float) else v for v in row])


def read_table_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_summary_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def ensure_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out
