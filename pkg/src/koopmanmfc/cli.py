"""Command-line interface.

Subcommands: simulate, spectrum, eigs, fit, predict, mpc, bench,
study-convergence, study-optimality. A JSON config (--config) plus the
seed fully determines every artifact; flags override individual fields.
Exit codes: 0 success, 2 config validation failure, 1 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .benchmarks import benchmark_names, make_benchmark
from .config import ConfigError, ExperimentConfig
from .dynamics import AggregatedState, simulate_ensemble
from .model import load_model, predict_observable, save_model
from .observables import registry_names
from .oracle import enumerate_control_grid, solve_lq_meanfield_oracle
from . import figures, reporting, studies
from .spectral import detect_atoms, estimate_correlations

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    # Global flags accepted both before and after the subcommand; SUPPRESS
    # defaults keep the subparser from clobbering values parsed up front.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS,
                        help="experiment config JSON")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override config seed")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS,
                        help="output directory")
    common.add_argument("--no-plots", action="store_true", default=argparse.SUPPRESS,
                        help="skip figure rendering")

    parser = argparse.ArgumentParser(
        prog="koopmanmfc",
        description="Spectral Koopman models and receding-horizon control "
        "for stochastic mean-field benchmarks.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_, parents=[common])
        return p

    add("simulate", "simulate benchmark trajectories and export them")

    p_spec = add("spectrum", "estimate and decompose the spectral measure")
    p_spec.add_argument("--filter", choices=["fejer", "cosine", "sharp"], default=None)

    add("eigs", "detect eigenvalue atoms and export the eigenvalue table")

    add("fit", "build the full spectral model and save it")

    p_pred = add("predict", "predict an observable along the spectral model")
    p_pred.add_argument("--model", type=Path, default=None, help="saved model to load")
    p_pred.add_argument("--steps", type=int, default=20)

    p_mpc = add("mpc", "closed-loop receding-horizon control run")
    p_mpc.add_argument("--model", type=Path, default=None, help="saved model to load")
    p_mpc.add_argument(
        "--model-source", choices=["exact", "data"], default="exact",
        help="build the model from closed-form ingredients or from data",
    )
    p_mpc.add_argument("--horizon", type=int, default=None)
    p_mpc.add_argument("--quadrature", type=int, default=None)
    p_mpc.add_argument("--control-box", type=str, default=None, metavar="LO,HI")
    p_mpc.add_argument("--mode", choices=["relift", "paper-literal"], default=None)

    add("bench", "solve the benchmark's oracle problem")

    p_conv = add("study-convergence", "weak-metric error of the density vs order")
    p_conv.add_argument("--orders", type=str, default="200,800,3200")
    p_conv.add_argument("--length-factor", type=int, default=None)

    p_opt = add("study-optimality", "closed-loop optimality gap vs data size")
    p_opt.add_argument("--sizes", type=str, default="200,800,3200")
    p_opt.add_argument("--grid", type=str, default=None, metavar="XxU",
                       help="base grid shape, e.g. 12x32")

    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    config_path = getattr(args, "config", None)
    cfg = ExperimentConfig.from_json_file(config_path) if config_path else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out_dir = str(args.out)
    if getattr(args, "no_plots", False):
        cfg.plots = False
    if getattr(args, "filter", None):
        cfg.filter_kind = args.filter
    if getattr(args, "horizon", None):
        cfg.mpc.horizon = args.horizon
    if getattr(args, "quadrature", None):
        cfg.quadrature_size = args.quadrature
    if getattr(args, "mode", None):
        cfg.mpc.mode = args.mode
    box = getattr(args, "control_box", None)
    if box:
        try:
            lo, hi = (float(v) for v in box.split(","))
        except ValueError:
            raise ConfigError("mpc.u_lo: --control-box expects 'LO,HI'") from None
        cfg.mpc.u_lo, cfg.mpc.u_hi = lo, hi
    cfg.validate()
    if cfg.benchmark not in benchmark_names():
        raise ConfigError(
            f"benchmark: unknown name {cfg.benchmark!r}; "
            f"available: {', '.join(benchmark_names())}"
        )
    if cfg.observable not in registry_names():
        raise ConfigError(
            f"observable: unknown name {cfg.observable!r}; "
            f"available: {', '.join(registry_names())}"
        )
    return cfg


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{flag}: expected comma-separated integers") from None
    if not values:
        raise ConfigError(f"{flag}: expected at least one value")
    return values


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_simulate(cfg: ExperimentConfig, args) -> int:
    bench = make_benchmark(cfg.benchmark, **cfg.benchmark_params)
    out = reporting.ensure_dir(cfg.out_dir)
    if cfg.mean_mode == "ensemble" or cfg.particles > 1:
        result = simulate_ensemble(
            bench.system, bench.policy, bench.initial_sampler,
            cfg.particles, cfg.trajectory_length, cfg.seed,
        )
        trajs = result.trajectories()
    else:
        trajs = studies.simulate_config_data(cfg, bench)
    reporting.write_trajectory_csv(out / "trajectory.csv", trajs)
    summary = {
        "benchmark": bench.name,
        "trajectories": len(trajs),
        "steps": len(trajs[0]) - 1,
        "mode": trajs[0].mode,
        "seed": cfg.seed,
    }
    reporting.write_summary_json(out / "simulate_summary.json", summary)
    if cfg.plots:
        figures.save_trajectory_figure(out / "trajectory.png", trajs, title=bench.name)
    print(f"wrote {len(trajs)} trajectories of {summary['steps']} steps to {out}")
    return 0


def _cmd_spectrum(cfg: ExperimentConfig, args) -> int:
    summary = studies.run_spectrum_experiment(cfg, out_dir=cfg.out_dir)
    print(
        f"benchmark {summary['benchmark']}: mass residual "
        f"{summary['mass_conservation_residual']:.2e}, "
        f"{len(summary['atoms'])} atom(s) detected"
    )
    for atom in summary["atoms"]:
        print(f"  atom at theta = {atom['theta']:+.6f}, weight = "
              f"{atom['weight_re']:+.6f}{atom['weight_im']:+.6f}j")
    return 0


def _cmd_eigs(cfg: ExperimentConfig, args) -> int:
    bench = make_benchmark(cfg.benchmark, **cfg.benchmark_params)
    obs = studies.config_observable(cfg)
    trajs = studies.simulate_config_data(cfg, bench)
    corr = estimate_correlations(trajs, obs, obs, cfg.order, cfg.scheme)
    grid_size = cfg.grid_size if cfg.grid_size is not None else 4 * cfg.order
    atoms = detect_atoms(corr, grid_size, cfg.threshold)
    out = reporting.ensure_dir(cfg.out_dir)
    rows = []
    for atom in atoms:
        lam = np.exp(1j * atom.theta)
        w = complex(atom.weight)
        rows.append([float(atom.theta), w.real, w.imag, float(lam.real), float(lam.imag)])
    reporting.write_table_csv(
        out / "eigenvalues.csv",
        ["theta", "weight_re", "weight_im", "lambda_re", "lambda_im"],
        rows,
    )
    reporting.write_summary_json(
        out / "eigs_summary.json",
        {"benchmark": bench.name, "observable": obs.label, "order": cfg.order,
         "threshold": atoms.threshold, "count": len(atoms), "seed": cfg.seed},
    )
    print(f"{len(atoms)} eigenvalue atom(s) above threshold {atoms.threshold:.3e}")
    for row in rows:
        print(f"  theta = {row[0]:+.6f}  |weight| = {abs(complex(row[1], row[2])):.6f}")
    return 0


def _cmd_fit(cfg: ExperimentConfig, args) -> int:
    bench, model, observables = studies.build_benchmark_model(cfg)
    out = reporting.ensure_dir(cfg.out_dir)
    save_model(model, out / "model.json")
    summary = {
        "benchmark": bench.name,
        "eigenvalues": [ep.theta for ep in model.eigenpairs],
        "residuals": {lbl: model.coefficients[lbl].residual
                      for lbl in model.observable_labels()},
        "base_states": len(model.base_states),
        "order": model.order,
        "seed": cfg.seed,
    }
    reporting.write_summary_json(out / "fit_summary.json", summary)
    print(f"model with {len(model.eigenpairs)} eigenpair(s) saved to {out / 'model.json'}")
    return 0


def _cmd_predict(cfg: ExperimentConfig, args) -> int:
    if args.model is not None:
        model = load_model(args.model)
        bench = make_benchmark(cfg.benchmark, **cfg.benchmark_params)
    else:
        bench, model, _ = studies.build_benchmark_model(cfg)
    y0 = AggregatedState.unpack(model.base_states[0], model.state_dim, model.control_dim)
    steps = np.arange(args.steps + 1)
    target = "F"
    preds = np.array([predict_observable(model, y0, int(t), target) for t in steps])
    truth = None
    if bench.kind == "circle-rotation" and cfg.observable == "harmonic":
        k = int(cfg.observable_params.get("k", 1))
        alpha = bench.params["alpha"]
        g0 = np.exp(1j * k * y0.x[0])
        truth = np.exp(1j * k * alpha * steps) * g0
    out = reporting.ensure_dir(cfg.out_dir)
    rows = [[int(t), p.real, p.imag] for t, p in zip(steps, preds)]
    header = ["t", "predicted_re", "predicted_im"]
    if truth is not None:
        header += ["truth_re", "truth_im"]
        rows = [row + [tv.real, tv.imag] for row, tv in zip(rows, truth)]
    reporting.write_table_csv(out / "prediction.csv", header, rows)
    if cfg.plots:
        figures.save_prediction_figure(out / "prediction.png", steps, preds, truth)
    err = float(np.max(np.abs(preds - truth))) if truth is not None else None
    msg = f"predicted {len(steps)} steps of {target}"
    if err is not None:
        msg += f"; max |error| vs analytic truth = {err:.3e}"
    print(msg)
    return 0


def _cmd_mpc(cfg: ExperimentConfig, args) -> int:
    bench = make_benchmark(cfg.benchmark, **cfg.benchmark_params)
    if args.model is not None:
        model = load_model(args.model)
    elif args.model_source == "exact":
        bench, model = studies.exact_benchmark_model(cfg)
    else:
        bench, model, _ = studies.build_benchmark_model(cfg)
    summary = studies.run_closed_loop_experiment(cfg, model, bench, out_dir=cfg.out_dir)
    line = f"realized cost {summary['realized_mean']:.6f} over {summary['episodes']} episode(s)"
    if "oracle_cost" in summary:
        line += (f"; oracle {summary['oracle_cost']:.6f}"
                 f"; ratio {summary['cost_ratio']:.4f}")
    print(line)
    return 0


def _cmd_bench(cfg: ExperimentConfig, args) -> int:
    bench = make_benchmark(cfg.benchmark, **cfg.benchmark_params)
    solution = solve_lq_meanfield_oracle(bench)
    params = bench.params["spec"]
    summary = {
        "benchmark": bench.name,
        "optimal_cost": solution.optimal_cost,
        "gains": [gain.ravel().tolist() for gain in solution.gains],
        "method": solution.method,
    }
    if params.sigma == 0.0 and params.horizon <= 3:
        brute = enumerate_control_grid(params, grid_step=1e-3)
        summary["enumeration_cost"] = brute
        summary["enumeration_gap"] = abs(brute - solution.optimal_cost)
    out = reporting.ensure_dir(cfg.out_dir)
    reporting.write_summary_json(out / "oracle.json", summary)
    line = f"oracle J* = {solution.optimal_cost:.6f} ({solution.method})"
    if "enumeration_cost" in summary:
        line += f"; grid enumeration agrees within {summary['enumeration_gap']:.2e}"
    print(line)
    return 0


def _cmd_study_convergence(cfg: ExperimentConfig, args) -> int:
    orders = _parse_int_list(args.orders, "--orders")
    summary = studies.run_convergence_study(
        cfg, orders, length_factor=args.length_factor, out_dir=cfg.out_dir
    )
    for row in summary["rows"]:
        print(f"order {row['order']:6d}  length {row['length']:8d}  "
              f"weak error {row['weak_error']:.6e}")
    return 0


def _cmd_study_optimality(cfg: ExperimentConfig, args) -> int:
    sizes = _parse_int_list(args.sizes, "--sizes")
    x_points = u_points = None
    if args.grid:
        try:
            x_points, u_points = (int(v) for v in args.grid.lower().split("x"))
        except ValueError:
            raise ConfigError("--grid: expected a shape like 12x32") from None
    summary = studies.run_optimality_study(
        cfg, sizes, out_dir=cfg.out_dir, x_points=x_points, u_points=u_points
    )
    print(f"oracle J* = {summary['oracle_cost']:.6f}")
    for row in summary["rows"]:
        print(f"size {row['size']:6d}  realized {row['realized_cost']:.6f}  "
              f"gap {row['gap']:.6f}")
    if "exact_reference" in summary:
        ref = summary["exact_reference"]
        print(f"exact-ingredient reference: realized {ref['realized_mean']:.6f} "
              f"(ratio {ref['cost_ratio']:.4f})")
    return 0


_HANDLERS = {
    "simulate": _cmd_simulate,
    "spectrum": _cmd_spectrum,
    "eigs": _cmd_eigs,
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "mpc": _cmd_mpc,
    "bench": _cmd_bench,
    "study-convergence": _cmd_study_convergence,
    "study-optimality": _cmd_study_optimality,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        return _HANDLERS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures map to exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
