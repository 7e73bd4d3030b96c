"""Experiment orchestration: spectrum runs, convergence and optimality studies.

Each study writes CSV tables (the canonical artifacts), a JSON summary with
the headline numbers, and a PNG figure alongside, all derived
deterministically from the experiment config and seed.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .benchmarks import Benchmark, make_benchmark
from .config import ExperimentConfig
from .dynamics import (
    AggregatedState,
    NoiseModel,
    Trajectory,
    as_rng,
    simulate_realizations,
    simulate_trajectory,
)
from .dynamics import _apply_diffusion, _eval_map
from .model import (
    CorrelationSequence,
    KoopmanSpectralModel,
    LagTable,
    SpectralConfig,
    assemble_model,
    build_model,
    exact_quadratic_model,
)
from .mpc import ClosedLoopResult, closed_loop_run
from .observables import Observable, builtin_observable, cost_observable
from .oracle import solve_lq_meanfield_oracle
from . import figures, reporting
from .spectral import (
    detect_atoms,
    estimate_correlations,
    extract_continuous_part,
    reconstruct_measure,
)

__all__ = [
    "UnsupportedStudyError",
    "config_observable",
    "simulate_config_data",
    "run_spectrum_experiment",
    "weak_test_functions",
    "run_convergence_study",
    "sample_behavior_cloud",
    "default_grid_shape",
    "design_base_grid",
    "build_model_from_realizations",
    "build_benchmark_model",
    "exact_benchmark_model",
    "run_closed_loop_experiment",
    "run_optimality_study",
]

COST_LABELS = ("F", "C", "G", "H")


class UnsupportedStudyError(ValueError):
    """The requested study needs benchmark structure this config lacks."""


def config_observable(cfg: ExperimentConfig) -> Observable:
    return builtin_observable(cfg.observable, **cfg.observable_params)


def simulate_config_data(
    cfg: ExperimentConfig, bench: Benchmark, length: int | None = None
) -> list[Trajectory]:
    """Trajectory set per the config: R runs of the configured length.

    Under the ergodic scheme each run starts from a fresh draw of the
    benchmark's initial law; under the ensemble scheme all runs share one
    initial state (replicate realizations).
    """
    gen = as_rng(cfg.seed)
    steps = length if length is not None else cfg.trajectory_length
    if cfg.scheme == "ensemble":
        y0 = bench.initial_state(gen)
        return simulate_realizations(
            bench.system, bench.policy, y0, steps, cfg.trajectory_count, gen
        )
    return [
        simulate_trajectory(bench.system, bench.policy, bench.initial_state(gen), steps, gen)
        for _ in range(cfg.trajectory_count)
    ]


# ---------------------------------------------------------------------------
# Spectrum experiment
# ---------------------------------------------------------------------------


def run_spectrum_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """simulate -> correlations -> density -> atoms -> continuous part.

    Writes density.csv, atoms.csv, continuous.csv, summary.json, and
    spectrum.png (unless plots are disabled). Returns the summary dict.
    """
    bench = make_benchmark(cfg.benchmark, **cfg.benchmark_params)
    obs = config_observable(cfg)
    trajs = simulate_config_data(cfg, bench)
    corr = estimate_correlations(trajs, obs, obs, cfg.order, cfg.scheme)
    grid_size = cfg.grid_size if cfg.grid_size is not None else 4 * cfg.order
    estimate = reconstruct_measure(corr, cfg.filter_kind, grid_size)
    atoms = detect_atoms(corr, grid_size, cfg.threshold)
    continuous = extract_continuous_part(estimate, atoms)

    mass = estimate.mass()
    expected = 2.0 * np.pi * corr.a0
    residual = abs(mass - expected) / max(abs(expected), 1e-300)
    summary = {
        "benchmark": bench.name,
        "observable": obs.label,
        "order": cfg.order,
        "grid_size": grid_size,
        "filter": cfg.filter_kind,
        "scheme": cfg.scheme,
        "sample_count": corr.sample_count,
        "a0": [corr.a0.real, corr.a0.imag],
        "mass": [mass.real, mass.imag],
        "mass_conservation_residual": residual,
        "atom_threshold": atoms.threshold,
        "atoms": [
            {"theta": a.theta, "weight_re": complex(a.weight).real,
             "weight_im": complex(a.weight).imag}
            for a in atoms
        ],
        "seed": cfg.seed,
    }
    if out_dir is not None:
        out = reporting.ensure_dir(out_dir)
        reporting.write_density_csv(out / "density.csv", estimate)
        reporting.write_atoms_csv(out / "atoms.csv", atoms)
        reporting.write_density_csv(out / "continuous.csv", (estimate.grid, continuous))
        reporting.write_summary_json(out / "summary.json", summary)
        if cfg.plots:
            figures.save_density_figure(
                out / "spectrum.png", estimate.grid, estimate.density, list(atoms),
                title=f"{bench.name}: {obs.label}",
            )
    return summary


# ---------------------------------------------------------------------------
# Convergence study
# ---------------------------------------------------------------------------


def weak_test_functions() -> list[Callable[[np.ndarray], np.ndarray]]:
    """Ten Lipschitz-normalized trigonometric test functions, degree <= 5."""
    fns: list[Callable[[np.ndarray], np.ndarray]] = []
    for k in range(1, 6):
        fns.append(lambda t, k=k: np.cos(k * np.asarray(t)) / k)
        fns.append(lambda t, k=k: np.sin(k * np.asarray(t)) / k)
    return fns


def run_convergence_study(
    cfg: ExperimentConfig,
    orders: Sequence[int],
    length_factor: int | None = None,
    out_dir=None,
) -> dict:
    """Weak-metric error of the reconstructed measure against analytic truth.

    For each order N the density is rebuilt from fresh data of length
    length_factor * N (or the configured length when no factor is given)
    and integrated against the fixed test functions; the error is the mean
    absolute gap to the truth integrals. Benchmarks without analytic truth
    for the configured observable are unsupported.
    """
    bench = make_benchmark(cfg.benchmark, **cfg.benchmark_params)
    truth = bench.spectral_truth(cfg.observable, cfg.observable_params)
    if truth is None:
        raise UnsupportedStudyError(
            f"benchmark {bench.name} has no analytic spectral truth for "
            f"observable {cfg.observable!r}"
        )
    obs = config_observable(cfg)
    fns = weak_test_functions()
    truth_integrals = np.array([truth.integrate(fn) for fn in fns])

    rows = []
    for order in orders:
        length = length_factor * order if length_factor else cfg.trajectory_length
        if length < order + 1:
            raise UnsupportedStudyError(
                f"trajectory length {length} cannot support order {order}"
            )
        trajs = simulate_config_data(cfg, bench, length=length)
        corr = estimate_correlations(trajs, obs, obs, order, cfg.scheme)
        estimate = reconstruct_measure(corr, cfg.filter_kind, 4 * order)
        quad = 2.0 * np.pi / estimate.grid_size
        est_integrals = np.array(
            [float(np.real(np.sum(fn(estimate.grid) * estimate.density)) * quad) for fn in fns]
        )
        error = float(np.mean(np.abs(est_integrals - truth_integrals)))
        rows.append({"order": int(order), "length": int(length), "weak_error": error})

    summary = {
        "benchmark": bench.name,
        "observable": obs.label,
        "filter": cfg.filter_kind,
        "length_factor": length_factor,
        "seed": cfg.seed,
        "rows": rows,
    }
    if out_dir is not None:
        out = reporting.ensure_dir(out_dir)
        reporting.write_table_csv(
            out / "convergence.csv",
            ["order", "length", "weak_error"],
            [[r["order"], r["length"], r["weak_error"]] for r in rows],
        )
        reporting.write_summary_json(out / "summary.json", summary)
        if cfg.plots:
            figures.save_convergence_figure(
                out / "convergence.png",
                [r["order"] for r in rows],
                [r["weak_error"] for r in rows],
                title=f"{bench.name}: weak error vs order",
            )
    return summary


# ---------------------------------------------------------------------------
# Realization-ensemble model building (streaming)
# ---------------------------------------------------------------------------


def sample_behavior_cloud(
    bench: Benchmark, count: int, burn_steps: int, rng
) -> list[AggregatedState]:
    """Base states sampled from a behavior-policy run of the benchmark."""
    gen = as_rng(rng)
    y0 = bench.initial_state(gen)
    traj = simulate_trajectory(bench.system, bench.policy, y0, burn_steps, gen)
    keep = np.unique(np.round(np.linspace(0, len(traj) - 1, count)).astype(int))
    return [traj.state(int(k)) for k in keep]


def default_grid_shape(base_states: int) -> tuple[int, int]:
    """Split a base-state budget into (x_points, u_points) with u twice as
    fine: the horizon objective's control curvature dominates the
    interpolation error."""
    x_points = max(int(round(np.sqrt(base_states / 2))), 2)
    u_points = max(base_states // x_points, 2)
    return x_points, u_points


def design_base_grid(
    bench: Benchmark,
    x_points: int,
    u_points: int,
    u_lo: float,
    u_hi: float,
    margin: float = 0.35,
    rollout_steps: int = 30,
) -> list[AggregatedState]:
    """Deterministic (x, u) base grid covering the controller's query manifold.

    MPC queries lift states (x, mu ~ x, u, rho = u) with u swept over the
    whole admissible box, so conditional-mean tables need coverage there;
    states visited by the behavior policy alone do not provide it. The x
    range comes from a noise-free behavior rollout padded by `margin` of
    its span; base states sit at (x, x, u, u).
    """
    gen = as_rng(0)
    y = bench.initial_state(gen)
    x, mu = y.x.copy(), y.mu.copy()
    xs = [float(x[0])]
    for _ in range(rollout_steps):
        u = np.atleast_1d(np.asarray(bench.policy.mean_map(x), dtype=float))
        b = np.asarray(bench.system.drift(x, mu, u, u), dtype=float)
        x, mu = b.copy(), b.copy()
        xs.append(float(x[0]))
    lo, hi = min(xs), max(xs)
    span = max(hi - lo, 0.5)
    lo -= margin * span
    hi += margin * span
    grid = []
    for xv in np.linspace(lo, hi, x_points):
        for uv in np.linspace(u_lo, u_hi, u_points):
            grid.append(AggregatedState.of(xv, xv, uv, uv))
    return grid


def build_model_from_realizations(
    bench: Benchmark,
    base_states: Sequence[AggregatedState],
    observables: dict[str, Observable],
    config: SpectralConfig,
    replicates: int,
    rng,
) -> KoopmanSpectralModel:
    """Model from replicate rollouts at fixed base states, streamed.

    Each base state spawns `replicates` independent rollouts under the
    benchmark's behavior policy. Conditional-mean sequences are averaged
    over replicates per base state; correlation coefficients average
    conj(g(y_0)) g(y_n) over every rollout (the ensemble estimator over the
    base cloud). Only one time slice of the particle block is alive at a
    time, so memory stays linear in (bases x replicates).
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    system, policy = bench.system, bench.policy
    gen = as_rng(rng)
    n, m = system.state_dim, system.control_dim
    bases = len(base_states)
    labels = sorted(observables)
    for lbl in labels:
        if observables[lbl].vec_fn is None:
            raise ValueError(f"observable {lbl!r} needs a vectorized evaluator for streaming")

    detect_with = sorted(config.detect_with) if config.detect_with is not None else labels
    starts = np.stack([y.packed() for y in base_states])  # (B, D)
    reps = np.repeat(starts, replicates, axis=0)  # particle (b, r) at row b*R + r
    x = reps[:, :n].copy()
    mu = reps[:, n : 2 * n].copy()
    u = reps[:, 2 * n : 2 * n + m].copy()
    rho = reps[:, 2 * n + m :].copy()
    total = bases * replicates

    max_lag = max(config.order, config.harmonic_terms)
    sequences = {lbl: np.zeros((bases, max_lag + 1), dtype=complex) for lbl in labels}
    corr_acc = {lbl: np.zeros(config.order + 1, dtype=complex) for lbl in detect_with}
    first_values: dict[str, np.ndarray] = {}

    for lag in range(max_lag + 1):
        for lbl in labels:
            vals = np.asarray(observables[lbl].vec_fn(x, mu, u, rho), dtype=complex)
            sequences[lbl][:, lag] = vals.reshape(bases, replicates).mean(axis=1)
            if lag == 0:
                first_values[lbl] = np.conj(vals)
            if lbl in corr_acc and lag <= config.order:
                corr_acc[lbl][lag] += np.sum(first_values[lbl] * vals)
        if lag == max_lag:
            break
        b = _eval_map("drift", system.drift, x, mu, u, rho)
        sig = _eval_map("diffusion", system.diffusion, x, mu, u, rho)
        w = system.state_noise.sample(gen, total)
        x = b + _apply_diffusion(np.asarray(sig), w)
        mu = b
        pi = np.broadcast_to(
            np.asarray(_eval_map("policy", policy.mean_map, x), dtype=float), (total, m)
        )
        u = pi + policy.randomization.sample(gen, total)
        rho = np.array(pi)

    correlations = {
        lbl: CorrelationSequence(
            corr_acc[lbl] / (2.0 * np.pi * total), lbl, lbl, total
        )
        for lbl in detect_with
    }
    table = LagTable(starts, sequences, max_lag, "ensemble", n, m)
    return assemble_model(table, correlations, config)


# ---------------------------------------------------------------------------
# Benchmark model builders
# ---------------------------------------------------------------------------


def benchmark_observables(bench: Benchmark, cfg: ExperimentConfig) -> dict[str, Observable]:
    """Cost observables for LQ benchmarks; the configured observable as F
    (with zero C, G, H placeholders) everywhere else."""
    if bench.kind == "lq-meanfield":
        return {lbl: cost_observable(bench.costs, lbl) for lbl in COST_LABELS}
    obs = config_observable(cfg)
    zero = builtin_observable("zero")
    return {"F": obs, "C": zero, "G": zero, "H": zero}


def build_benchmark_model(
    cfg: ExperimentConfig,
) -> tuple[Benchmark, KoopmanSpectralModel, dict[str, Observable]]:
    """Data-driven model for the configured benchmark.

    LQ benchmarks build from replicate rollouts on a designed (x, u) base
    grid (trajectory_count replicates per base state), since the controller
    queries controls across the whole admissible box; other benchmarks
    build from the configured trajectory data directly.
    """
    bench = make_benchmark(cfg.benchmark, **cfg.benchmark_params)
    observables = benchmark_observables(bench, cfg)
    if bench.kind == "lq-meanfield":
        x_points, u_points = default_grid_shape(cfg.max_base_states)
        cloud = design_base_grid(bench, x_points, u_points, cfg.mpc.u_lo, cfg.mpc.u_hi)
        model = build_model_from_realizations(
            bench, cloud, observables, cfg.spectral(), max(1, cfg.trajectory_count),
            rng=cfg.seed,
        )
    else:
        trajs = simulate_config_data(cfg, bench)
        model = build_model(trajs, observables, cfg.spectral())
    return bench, model, observables


def exact_benchmark_model(
    cfg: ExperimentConfig, order: int = 1500
) -> tuple[Benchmark, KoopmanSpectralModel]:
    """Closed-form model of the configured LQ benchmark (deterministic part)."""
    bench = make_benchmark(cfg.benchmark, **cfg.benchmark_params)
    if bench.kind != "lq-meanfield":
        raise UnsupportedStudyError("exact models exist only for lq-meanfield benchmarks")
    params = bench.params["spec"]
    gain = bench.params["gain"]
    model = exact_quadratic_model(
        params.closed_loop_matrix(gain),
        params.cost_quadratic_forms(),
        state_dim=1,
        control_dim=1,
        order=order,
        quadrature_size=cfg.quadrature_size,
        filter_kind=cfg.filter_kind,
    )
    return bench, model


# ---------------------------------------------------------------------------
# Closed-loop experiment and optimality study
# ---------------------------------------------------------------------------


def run_closed_loop_experiment(
    cfg: ExperimentConfig,
    model: KoopmanSpectralModel,
    bench: Benchmark,
    episodes: int | None = None,
    out_dir=None,
    tag: str = "mpc",
) -> dict:
    """Closed-loop episodes of the configured benchmark under one model.

    Writes closed_loop.csv for the first episode plus a summary; returns
    realized costs, the oracle cost when the benchmark has one, and the
    ratio against it.
    """
    if bench.costs is None:
        raise UnsupportedStudyError("closed-loop experiments need a benchmark with costs")
    mpc_cfg = cfg.mpc_config()
    n_episodes = episodes if episodes is not None else cfg.mpc.episodes
    randomization = NoiseModel("zero", 0.0, bench.system.control_dim)
    results: list[ClosedLoopResult] = []
    for e in range(n_episodes):
        out = closed_loop_run(
            bench.system,
            randomization,
            model,
            mpc_cfg,
            bench.initial_state(cfg.seed + e),
            bench.costs.horizon,
            bench.costs,
            rng=cfg.seed + 1000 * e,
        )
        results.append(out)
    realized = [r.realized_cost for r in results]
    summary = {
        "benchmark": bench.name,
        "episodes": n_episodes,
        "realized_costs": realized,
        "realized_mean": float(np.mean(realized)),
        "horizon": mpc_cfg.horizon,
        "mode": mpc_cfg.mode,
        "seed": cfg.seed,
    }
    if bench.kind == "lq-meanfield":
        oracle = solve_lq_meanfield_oracle(bench).optimal_cost
        summary["oracle_cost"] = oracle
        summary["cost_ratio"] = float(np.mean(realized)) / oracle if oracle else float("inf")
    if out_dir is not None:
        out = reporting.ensure_dir(out_dir)
        reporting.write_closed_loop_csv(out / f"{tag}_closed_loop.csv", results[0])
        reporting.write_summary_json(out / f"{tag}_summary.json", summary)
        if cfg.plots:
            figures.save_closed_loop_figure(
                out / f"{tag}_closed_loop.png", results[0], title=f"{bench.name} closed loop"
            )
    return summary


def run_optimality_study(
    cfg: ExperimentConfig,
    sizes: Sequence[int],
    out_dir=None,
    x_points: int | None = None,
    u_points: int | None = None,
    include_exact: bool = True,
) -> dict:
    """Realized-cost gap against the oracle across data sizes.

    A data size is a total rollout budget: the (x, u) base grid is designed
    once and each size provides size // (grid size) replicate rollouts per
    base state (at least one), so growing budgets shrink the
    conditional-mean estimator noise. Gaps |J_N - J*| are reported per
    size, along with an exact-ingredient reference run when requested.
    """
    bench = make_benchmark(cfg.benchmark, **cfg.benchmark_params)
    if bench.kind != "lq-meanfield":
        raise UnsupportedStudyError("the optimality study runs on lq-meanfield benchmarks")
    oracle = solve_lq_meanfield_oracle(bench).optimal_cost
    observables = benchmark_observables(bench, cfg)
    if x_points is None or u_points is None:
        default_x, default_u = default_grid_shape(cfg.max_base_states)
        x_points = x_points or default_x
        u_points = u_points or default_u
    cloud = design_base_grid(bench, x_points, u_points, cfg.mpc.u_lo, cfg.mpc.u_hi)
    rows = []
    for size in sizes:
        # A data size is a rollout budget spread over the base grid.
        replicates = max(1, int(size) // len(cloud))
        model = build_model_from_realizations(
            bench, cloud, observables, cfg.spectral(), replicates, rng=cfg.seed + int(size)
        )
        episode = run_closed_loop_experiment(cfg, model, bench, out_dir=None)
        realized = episode["realized_mean"]
        rows.append(
            {
                "size": int(size),
                "replicates": replicates,
                "realized_cost": realized,
                "oracle_cost": oracle,
                "gap": abs(realized - oracle),
            }
        )
    summary = {
        "benchmark": bench.name,
        "oracle_cost": oracle,
        "base_states": len(cloud),
        "grid": [x_points, u_points],
        "episodes": cfg.mpc.episodes,
        "seed": cfg.seed,
        "rows": rows,
    }
    if include_exact:
        _, exact = exact_benchmark_model(cfg)
        ref = run_closed_loop_experiment(cfg, exact, bench, out_dir=None)
        summary["exact_reference"] = {
            "realized_mean": ref["realized_mean"],
            "cost_ratio": ref["cost_ratio"],
        }
    if out_dir is not None:
        out = reporting.ensure_dir(out_dir)
        reporting.write_table_csv(
            out / "optimality.csv",
            ["size", "replicates", "realized_cost", "oracle_cost", "gap"],
            [[r["size"], r["replicates"], r["realized_cost"], r["oracle_cost"], r["gap"]]
             for r in rows],
        )
        reporting.write_summary_json(out / "summary.json", summary)
        if cfg.plots:
            figures.save_optimality_figure(
                out / "optimality.png",
                [r["size"] for r in rows],
                [r["gap"] for r in rows],
                title=f"{bench.name}: optimality gap",
            )
    return summary
