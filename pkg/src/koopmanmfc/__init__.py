"""Spectral Koopman models for stochastic mean-field systems.

Learns a diagonal spectral model of the aggregated dynamics from trajectory
data (filtered Fourier reconstruction of the spectral measure, harmonic
eigenfunction averages, least-squares expansion coefficients) and drives a
receding-horizon controller on the lifted linear dynamics. Benchmarks,
oracles, studies, and a CLI live alongside the library.
"""

__version__ = "0.1.0"

from .benchmarks import Benchmark, LqMeanFieldParams, benchmark_names, make_benchmark
from .config import ConfigError, ExperimentConfig, MpcSettings
from .dynamics import (
    AggregatedState,
    CostSpec,
    EnsembleResult,
    MapEvaluationError,
    MeanFieldSystem,
    NoiseModel,
    StationaryPolicy,
    Trajectory,
    evaluate_cost,
    simulate_ensemble,
    simulate_realizations,
    simulate_trajectory,
    step_controlled,
    step_uncontrolled,
)
from .model import (
    EigenPair,
    ExpansionCoefficients,
    KoopmanSpectralModel,
    ModelFormatError,
    SpectralConfig,
    build_model,
    exact_quadratic_model,
    fit_expansion_coefficients,
    harmonic_average_eigenfunction,
    load_model,
    predict_observable,
    save_model,
)
from .mpc import (
    ClosedLoopResult,
    ControlConfigError,
    LiftedState,
    MpcConfig,
    MpcStepResult,
    closed_loop_run,
    lift,
    predict_horizon_cost,
    propagate_lifted,
    solve_mpc_step,
)
from .observables import (
    Observable,
    SampledObservable,
    builtin_observable,
    cost_observable,
    empirical_inner_product,
)
from .oracle import OracleSolution, solve_lq_meanfield_oracle
from .spectral import (
    Atom,
    CorrelationSequence,
    DetectedAtoms,
    FilterFunction,
    SpectralMeasureEstimate,
    detect_atoms,
    estimate_correlations,
    extract_continuous_part,
    make_filter,
    reconstruct_measure,
)

__all__ = [
    "__version__",
    "AggregatedState",
    "Atom",
    "Benchmark",
    "ClosedLoopResult",
    "ConfigError",
    "ControlConfigError",
    "CorrelationSequence",
    "CostSpec",
    "DetectedAtoms",
    "EigenPair",
    "EnsembleResult",
    "ExpansionCoefficients",
    "ExperimentConfig",
    "FilterFunction",
    "KoopmanSpectralModel",
    "LiftedState",
    "LqMeanFieldParams",
    "MapEvaluationError",
    "MeanFieldSystem",
    "ModelFormatError",
    "MpcConfig",
    "MpcSettings",
    "MpcStepResult",
    "NoiseModel",
    "Observable",
    "OracleSolution",
    "SampledObservable",
    "SpectralConfig",
    "SpectralMeasureEstimate",
    "StationaryPolicy",
    "Trajectory",
    "benchmark_names",
    "build_model",
    "builtin_observable",
    "closed_loop_run",
    "cost_observable",
    "detect_atoms",
    "empirical_inner_product",
    "estimate_correlations",
    "evaluate_cost",
    "exact_quadratic_model",
    "extract_continuous_part",
    "fit_expansion_coefficients",
    "harmonic_average_eigenfunction",
    "lift",
    "load_model",
    "make_benchmark",
    "make_filter",
    "predict_horizon_cost",
    "predict_observable",
    "propagate_lifted",
    "reconstruct_measure",
    "save_model",
    "simulate_ensemble",
    "simulate_realizations",
    "simulate_trajectory",
    "solve_lq_meanfield_oracle",
    "solve_mpc_step",
    "step_controlled",
    "step_uncontrolled",
]
