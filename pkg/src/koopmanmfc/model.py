"""Diagonal spectral model of the aggregated dynamics.

A built model holds, per detected eigenvalue, the angle theta (the
eigenvalue is e^{i theta}, unit modulus by construction) and an
eigenfunction table over a stored base-state sample set; per registered
observable it holds expansion coefficients and the absolutely continuous
component sampled at quadrature nodes. The predictor combines both parts:

    E[g(y_t)] ~= sum_l c_l e^{i t theta_l} phi_l(y) +
                 (2 pi / N_q) sum_n e^{i t theta_n} rho_g(theta_n, y)

Off-sample evaluation interpolates tables over the 4 nearest stored states
(inverse squared distance, exact passthrough on stored states). Models for
deterministic affine benchmarks may instead carry closed-form quadratic
evaluators; those models are exact but refuse serialization.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dynamics import AggregatedState, Trajectory
from .observables import Observable, sample_observable
from .spectral import (
    CorrelationSequence,
    DetectedAtoms,
    detect_atoms,
    estimate_correlations,
    make_filter,
)

__all__ = [
    "SpectralConfig",
    "EigenPair",
    "ExpansionCoefficients",
    "KoopmanSpectralModel",
    "ModelBuildError",
    "ModelFormatError",
    "LagTable",
    "build_lag_table",
    "harmonic_average_eigenfunction",
    "fit_expansion_coefficients",
    "assemble_model",
    "build_model",
    "quadrature_nodes",
    "predict_observable",
    "exact_quadratic_model",
    "save_model",
    "load_model",
]

MODEL_SCHEMA = "koopmanmfc-model-v1"


class ModelBuildError(RuntimeError):
    """A model construction stage failed; the stage name is in the message."""


class ModelFormatError(ValueError):
    """Model file is malformed, has a wrong schema tag, or a bad checksum."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralConfig:
    """Knobs for model construction.

    order: correlation order N. grid_size defaults to 4N. harmonic_terms is
    the eigenfunction average length J. quadrature_size N_q defaults to
    N + 64; predictions at step t are alias-free while t < N_q - N.
    scheme "ergodic" takes base states from time offsets of long
    trajectories; "ensemble" groups trajectories sharing an initial state
    and averages over realizations.
    """

    order: int = 200
    grid_size: int | None = None
    filter_kind: str = "fejer"
    threshold: float | None = None
    harmonic_terms: int = 64
    quadrature_size: int | None = None
    max_base_states: int = 512
    scheme: str = "ergodic"
    detect_with: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.harmonic_terms < 8:
            raise ValueError("harmonic_terms must be >= 8")
        if self.scheme not in ("ergodic", "ensemble"):
            raise ValueError("scheme must be 'ergodic' or 'ensemble'")

    @property
    def grid(self) -> int:
        return self.grid_size if self.grid_size is not None else 4 * self.order

    @property
    def quadrature(self) -> int:
        return self.quadrature_size if self.quadrature_size is not None else self.order + 64


def quadrature_nodes(size: int) -> np.ndarray:
    """theta_n = -pi + n 2 pi / size for n = 1 .. size."""
    return -np.pi + 2.0 * np.pi * np.arange(1, size + 1) / size


# ---------------------------------------------------------------------------
# Core data types
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class EigenPair:
    """Eigenvalue angle with the tabulated, unit-norm eigenfunction."""

    theta: float
    table: np.ndarray
    normalization: float
    source_label: str = ""

    def __post_init__(self) -> None:
        self.table = np.asarray(self.table, dtype=complex)

    @property
    def eigenvalue(self) -> complex:
        return complex(np.exp(1j * self.theta))


@dataclass(eq=False)
class ExpansionCoefficients:
    """Least-squares expansion of one observable over the eigen tables."""

    coefficients: np.ndarray
    residual: float

    def __post_init__(self) -> None:
        self.coefficients = np.asarray(self.coefficients, dtype=complex)
        if self.residual < 0:
            raise ValueError("residual must be nonnegative")


@dataclass(eq=False)
class KoopmanSpectralModel:
    """Eigenpairs, per-observable coefficients, and continuous node tables."""

    eigenpairs: list[EigenPair]
    coefficients: dict[str, ExpansionCoefficients]
    continuous: dict[str, np.ndarray]  # label -> (B, N_q) node values
    node_thetas: np.ndarray
    base_states: np.ndarray  # (B, 2(n+m)) packed
    state_dim: int
    control_dim: int
    order: int
    filter_kind: str = "fejer"
    analytic_eigen: list[Callable[[np.ndarray], complex]] | None = None
    analytic_continuous: dict[str, Callable[[np.ndarray], np.ndarray]] | None = None

    def __post_init__(self) -> None:
        self.node_thetas = np.asarray(self.node_thetas, dtype=float)
        self.base_states = np.asarray(self.base_states, dtype=float)
        labels = set(self.coefficients) | set(self.continuous)
        for label in labels:
            if label not in self.coefficients or label not in self.continuous:
                raise ValueError(f"observable {label!r} missing coefficients or density")

    @property
    def is_analytic(self) -> bool:
        return self.analytic_continuous is not None or self.analytic_eigen is not None

    @property
    def quadrature_size(self) -> int:
        return len(self.node_thetas)

    @property
    def eigen_thetas(self) -> np.ndarray:
        return np.array([ep.theta for ep in self.eigenpairs])

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.exp(1j * self.eigen_thetas)

    def observable_labels(self) -> tuple[str, ...]:
        return tuple(sorted(self.coefficients))

    # -- evaluation -------------------------------------------------------

    def interpolation_weights(self, packed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Indices and unnormalized inverse-square-distance weights (4-NN).

        Callers divide the weighted sum by np.sum of the same weights, so a
        table that is constant over the neighbors interpolates to exactly
        that constant (needed by the controller's exact tie-break
        contract). Stored states pass through exactly.
        """
        diffs = self.base_states - packed[None, :]
        dists = np.sqrt(np.sum(diffs * diffs, axis=1))
        nearest = int(np.argmin(dists))
        if dists[nearest] <= 1e-12:  # exact passthrough on stored states
            return np.array([nearest]), np.array([1.0])
        k = min(4, len(dists))
        idx = np.argpartition(dists, k - 1)[:k]
        idx = idx[np.argsort(dists[idx], kind="stable")]
        return idx, 1.0 / dists[idx] ** 2

    def eigenfunction_values(self, y: AggregatedState) -> np.ndarray:
        """phi_l(y) for every eigenpair, interpolated or closed form."""
        packed = y.packed()
        if self.analytic_eigen is not None:
            return np.array([fn(packed) for fn in self.analytic_eigen], dtype=complex)
        if not self.eigenpairs:
            return np.zeros(0, dtype=complex)
        idx, w = self.interpolation_weights(packed)
        tables = np.stack([ep.table for ep in self.eigenpairs])  # (K, B)
        # Interpolate deviations from the nearest stored value: tables that
        # are constant over the neighbors evaluate to exactly that constant.
        anchor = tables[:, idx[0]]
        dev = tables[:, idx] - anchor[:, None]
        return anchor + (dev @ w.astype(complex)) / np.sum(w)

    def continuous_profile(self, label: str, y: AggregatedState) -> np.ndarray:
        """Continuous-component node values rho_g(theta_n, y), length N_q."""
        self._require(label)
        packed = y.packed()
        if self.analytic_continuous is not None:
            return np.asarray(self.analytic_continuous[label](packed), dtype=complex)
        idx, w = self.interpolation_weights(packed)
        rows = self.continuous[label][idx]
        anchor = rows[0]
        dev = rows - anchor[None, :]
        return anchor + (w.astype(complex) @ dev) / np.sum(w)

    def _require(self, label: str) -> None:
        if label not in self.coefficients:
            raise LookupError(
                f"observable {label!r} not registered; have {', '.join(self.observable_labels())}"
            )

    def register_combination(self, label: str, weights: dict[str, complex]) -> None:
        """Register a linear combination of already-registered observables.

        Coefficients and continuous tables combine linearly, so predictions
        of the combination are exactly the combination of predictions.
        """
        missing = [g for g in weights if g not in self.coefficients]
        if missing:
            raise LookupError(f"cannot combine unregistered observables: {missing}")
        k = len(self.eigenpairs)
        coeff = np.zeros(k, dtype=complex)
        for g, a in weights.items():
            coeff += complex(a) * self.coefficients[g].coefficients
        self.coefficients[label] = ExpansionCoefficients(coeff, 0.0)
        if self.analytic_continuous is not None:
            parts = {g: self.analytic_continuous[g] for g in weights}
            scale = {g: complex(a) for g, a in weights.items()}
            self.analytic_continuous[label] = lambda packed: sum(
                scale[g] * np.asarray(parts[g](packed), dtype=complex) for g in parts
            )
            self.continuous[label] = np.zeros_like(next(iter(self.continuous.values())))
        else:
            table = np.zeros_like(next(iter(self.continuous.values())))
            for g, a in weights.items():
                table = table + complex(a) * self.continuous[g]
            self.continuous[label] = table


def predict_observable(
    model: KoopmanSpectralModel, y0: AggregatedState, t: int, label: str
) -> complex:
    """Spectral prediction of E[g(y_t)] from the state y0.

    Point part: sum_l c_l e^{i t theta_l} phi_l(y0). Continuous part:
    Riemann sum (2 pi / N_q) sum_n e^{i t theta_n} rho_g(theta_n, y0).
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    model._require(label)
    coeff = model.coefficients[label].coefficients
    point = 0.0 + 0.0j
    if len(coeff):
        phis = model.eigenfunction_values(y0)
        point = np.sum(coeff * np.exp(1j * t * model.eigen_thetas) * phis)
    profile = model.continuous_profile(label, y0)
    n_q = model.quadrature_size
    cont = (2.0 * np.pi / n_q) * np.sum(np.exp(1j * t * model.node_thetas) * profile)
    return complex(point + cont)


# ---------------------------------------------------------------------------
# Lag tables: conditional-mean sequences at stored base states
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class LagTable:
    """Per-base-state forward sequences m_g[b, j] ~= E[g(y_j) | y_0 = y_b].

    Ergodic sampling uses single-realization sequences at trajectory
    offsets; ensemble sampling groups trajectories that share an initial
    state and averages over the group (the expectation over realizations).
    """

    base_states: np.ndarray  # (B, D)
    sequences: dict[str, np.ndarray]  # label -> (B, max_lag + 1) complex
    max_lag: int
    scheme: str
    state_dim: int = 1
    control_dim: int = 0


def _even_subsample(count: int, limit: int) -> np.ndarray:
    if count <= limit:
        return np.arange(count)
    return np.unique(np.round(np.linspace(0, count - 1, limit)).astype(int))


def build_lag_table(
    data: Trajectory | Sequence[Trajectory],
    observables: dict[str, Observable],
    max_lag: int,
    max_base_states: int = 512,
    scheme: str = "ergodic",
) -> LagTable:
    """Evaluate observables along forward windows from stored base states."""
    trajs = [data] if isinstance(data, Trajectory) else list(data)
    if not trajs:
        raise ValueError("no trajectories supplied")
    need = max_lag + 1
    for t in trajs:
        if len(t) < need:
            raise ValueError(f"trajectory has {len(t)} states; lags need >= {need}")
    n = trajs[0].xs.shape[1]
    m = trajs[0].us.shape[1]

    if scheme == "ergodic":
        positions = [(r, i) for r, t in enumerate(trajs) for i in range(len(t) - max_lag)]
        keep = _even_subsample(len(positions), max_base_states)
        positions = [positions[k] for k in keep]
        base = np.stack([trajs[r].packed()[i] for r, i in positions])
        values = {
            label: np.stack([sample_observable(obs, t).values for t in trajs])
            for label, obs in observables.items()
        }
        sequences = {
            label: np.stack([vals[r, i : i + max_lag + 1] for r, i in positions])
            for label, vals in values.items()
        }
        return LagTable(base, sequences, max_lag, scheme, n, m)

    if scheme != "ensemble":
        raise ValueError("scheme must be 'ergodic' or 'ensemble'")
    groups: dict[bytes, list[int]] = {}
    order: list[bytes] = []
    for r, t in enumerate(trajs):
        key = t.packed()[0].tobytes()
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r)
    keep = _even_subsample(len(order), max_base_states)
    order = [order[k] for k in keep]
    base = np.stack([trajs[groups[key][0]].packed()[0] for key in order])
    sequences = {}
    for label, obs in observables.items():
        rows = []
        for key in order:
            members = groups[key]
            acc = np.zeros(max_lag + 1, dtype=complex)
            for r in members:
                acc += sample_observable(obs, trajs[r]).values[: max_lag + 1]
            rows.append(acc / len(members))
        sequences[label] = np.stack(rows)
    return LagTable(base, sequences, max_lag, "ensemble", n, m)


def _harmonic_average_rows(seq: np.ndarray, theta: float, n_terms: int) -> np.ndarray:
    """(1/J) sum_j e^{-i j theta} m[:, j] over j = 0 .. J-1."""
    phases = np.exp(-1j * theta * np.arange(n_terms))
    return seq[:, :n_terms] @ phases / n_terms


def _normalized_eigenpair(
    raw: np.ndarray, theta: float, source_label: str
) -> EigenPair:
    norm = float(np.sqrt(np.mean(np.abs(raw) ** 2)))
    table = raw / norm if norm > 0 else raw
    return EigenPair(float(theta), table, norm, source_label)


def harmonic_average_eigenfunction(
    data: Trajectory | Sequence[Trajectory],
    h: Observable,
    theta: float,
    n_terms: int,
    max_base_states: int = 512,
    scheme: str = "ergodic",
) -> EigenPair:
    """Eigenfunction table at theta by the generalized harmonic average.

    phi(y_b) = (1/J) sum_{j<J} e^{-i j theta} E[h(y_j) | y_0 = y_b], the
    average that projects h onto the eigenspace of e^{i theta}; the table is
    normalized to unit empirical norm. Requires trajectories of at least
    n_terms + 1 states and n_terms >= 8.
    """
    if n_terms < 8:
        raise ValueError("n_terms must be >= 8")
    trajs = [data] if isinstance(data, Trajectory) else list(data)
    for t in trajs:
        if len(t) < n_terms + 1:
            raise ValueError(
                f"trajectory has {len(t)} states; {n_terms} harmonic terms need >= {n_terms + 1}"
            )
    table = build_lag_table(trajs, {h.label: h}, n_terms, max_base_states, scheme)
    raw = _harmonic_average_rows(table.sequences[h.label], theta, n_terms)
    return _normalized_eigenpair(raw, theta, h.label)


def fit_expansion_coefficients(
    g_samples: np.ndarray, eigen_tables: Sequence[np.ndarray] | np.ndarray
) -> ExpansionCoefficients:
    """Least squares for g(y_b) ~= sum_l c_l phi_l(y_b) over the base states.

    Solved by SVD (numpy lstsq), which is the stable orthogonal
    factorization and returns the minimum-norm solution on rank-deficient
    designs (with a warning).
    """
    g = np.asarray(g_samples, dtype=complex).ravel()
    tables = [np.asarray(t, dtype=complex).ravel() for t in eigen_tables]
    if not tables:
        return ExpansionCoefficients(np.zeros(0, dtype=complex), float(np.linalg.norm(g)))
    design = np.stack(tables, axis=1)
    if design.shape[0] < design.shape[1]:
        raise ValueError(
            f"{design.shape[0]} samples cannot determine {design.shape[1]} coefficients"
        )
    coeff, _, rank, _ = np.linalg.lstsq(design, g, rcond=None)
    if rank < design.shape[1]:
        warnings.warn(
            f"rank-deficient eigenfunction design (rank {rank} < {design.shape[1]}); "
            "returning the minimum-norm solution",
            stacklevel=2,
        )
    residual = float(np.linalg.norm(g - design @ coeff))
    return ExpansionCoefficients(coeff, residual)


# ---------------------------------------------------------------------------
# Model construction
# ---------------------------------------------------------------------------


def _stage(name: str):
    class _StageContext:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, ModelBuildError):
                raise ModelBuildError(f"stage {name!r}: {exc}") from exc
            return False

    return _StageContext()


def _merge_atoms(
    per_label: dict[str, DetectedAtoms], min_separation: float
) -> list[tuple[float, complex, str]]:
    """Union of detected atoms across observables, strongest representative kept."""
    pool: list[tuple[float, complex, str]] = []
    for label in sorted(per_label):
        for atom in per_label[label]:
            pool.append((atom.theta, atom.weight, label))
    pool.sort(key=lambda rec: (-abs(rec[1]), rec[0]))
    merged: list[tuple[float, complex, str]] = []
    for theta, weight, label in pool:
        gap = lambda other: min(abs(theta - other) % (2 * np.pi), 2 * np.pi - abs(theta - other) % (2 * np.pi))
        if all(gap(m[0]) > min_separation for m in merged):
            merged.append((theta, weight, label))
    return merged


def _continuous_node_table(
    d_seq: np.ndarray,
    atom_seq: np.ndarray,
    weights: np.ndarray,
    node_thetas: np.ndarray,
) -> np.ndarray:
    """Filtered inversion of the residual sequences at the quadrature nodes.

    d_seq and atom_seq are (B, N+1) with the hermitian extension implied
    (c_{-j} = conj(c_j)); returns (B, N_q) real-valued profiles as complex.
    """
    c = d_seq - atom_seq  # (B, N+1)
    order = c.shape[1] - 1
    out = np.repeat((weights[0] * c[:, :1]).astype(complex), len(node_thetas), axis=1)
    chunk = 256
    for start in range(1, order + 1, chunk):
        ns = np.arange(start, min(start + chunk, order + 1))
        phases = np.exp(-1j * np.outer(ns, node_thetas))  # (chunk, N_q)
        a = weights[ns][None, :] * c[:, ns]  # (B, chunk)
        # Hermitian pair: w_j (c_j e^{-ij t} + conj(c_j) e^{ij t}) = 2 Re(...)
        out += 2.0 * (a.real @ phases.real - a.imag @ phases.imag)
    return out


def assemble_model(
    table: LagTable,
    correlations: dict[str, CorrelationSequence],
    config: SpectralConfig,
) -> KoopmanSpectralModel:
    """Assemble a model from precomputed lag sequences and correlations.

    Stages: atom detection per correlation sequence (union merged at 2 grid
    cells), harmonic-average eigenfunctions per atom, per-observable least
    squares, and continuous node tables with the atoms' contribution
    subtracted. Stage names are attached to propagated errors.
    """
    if table.max_lag < max(config.order, config.harmonic_terms):
        raise ValueError(
            f"lag table depth {table.max_lag} below required "
            f"{max(config.order, config.harmonic_terms)}"
        )
    labels = sorted(table.sequences)

    with _stage("atoms"):
        per_label = {
            lbl: detect_atoms(corr, config.grid, config.threshold)
            for lbl, corr in correlations.items()
        }
        min_sep = 2.0 * (2.0 * np.pi / config.grid)
        merged = _merge_atoms(per_label, min_sep)

    with _stage("eigenfunctions"):
        eigenpairs = [
            _normalized_eigenpair(
                _harmonic_average_rows(table.sequences[src], theta, config.harmonic_terms),
                theta,
                src,
            )
            for theta, _w, src in merged
        ]

    with _stage("coefficients"):
        tables = [ep.table for ep in eigenpairs]
        coefficients = {
            lbl: fit_expansion_coefficients(table.sequences[lbl][:, 0], tables)
            for lbl in labels
        }

    with _stage("continuous"):
        filt = make_filter(config.filter_kind)
        weights = filt.weights(config.order)
        nodes = quadrature_nodes(config.quadrature)
        thetas = np.array([ep.theta for ep in eigenpairs])
        continuous: dict[str, np.ndarray] = {}
        lags = np.arange(config.order + 1)
        for lbl in labels:
            d_seq = table.sequences[lbl][:, : config.order + 1] / (2.0 * np.pi)
            if eigenpairs:
                phi_mat = np.stack([ep.table for ep in eigenpairs], axis=1)  # (B, K)
                evol = np.exp(1j * np.outer(thetas, lags))  # (K, N+1)
                amp = phi_mat * coefficients[lbl].coefficients[None, :]  # (B, K)
                atom_seq = (amp @ evol) / (2.0 * np.pi)
            else:
                atom_seq = np.zeros_like(d_seq)
            continuous[lbl] = _continuous_node_table(d_seq, atom_seq, weights, nodes)

    return KoopmanSpectralModel(
        eigenpairs=eigenpairs,
        coefficients=coefficients,
        continuous=continuous,
        node_thetas=nodes,
        base_states=table.base_states,
        state_dim=table.state_dim,
        control_dim=table.control_dim,
        order=config.order,
        filter_kind=config.filter_kind,
    )


def build_model(
    data: Trajectory | Sequence[Trajectory],
    observables: dict[str, Observable],
    config: SpectralConfig,
) -> KoopmanSpectralModel:
    """Full model construction from trajectory data.

    Chains: autocorrelations of the detection observables, the lag table of
    forward sequences at stored base states, then assemble_model (atoms,
    eigenfunctions, coefficients, continuous tables).
    """
    trajs = [data] if isinstance(data, Trajectory) else list(data)
    if not observables:
        raise ValueError("at least one observable is required")
    labels = sorted(observables)
    detect_with = list(config.detect_with) if config.detect_with is not None else labels
    for lbl in detect_with:
        if lbl not in observables:
            raise ValueError(f"detect_with label {lbl!r} is not a registered observable")

    with _stage("correlations"):
        corrs = {
            lbl: estimate_correlations(
                trajs, observables[lbl], observables[lbl], config.order, config.scheme
            )
            for lbl in detect_with
        }

    with _stage("lag-table"):
        max_lag = max(config.order, config.harmonic_terms)
        table = build_lag_table(
            trajs, observables, max_lag, config.max_base_states, config.scheme
        )

    return assemble_model(table, corrs, config)


# ---------------------------------------------------------------------------
# Exact models for deterministic affine benchmarks
# ---------------------------------------------------------------------------


def exact_quadratic_model(
    transition: np.ndarray,
    forms: dict[str, np.ndarray],
    state_dim: int,
    control_dim: int,
    order: int = 2000,
    quadrature_size: int | None = None,
    filter_kind: str = "fejer",
    noise_cov: np.ndarray | None = None,
) -> KoopmanSpectralModel:
    """Closed-form model for y' = A y + noise with quadratic observables.

    The conditional means E[g(y_j) | y_0 = y] = y' Q_j y + k_j follow the
    exact recursions Q_{j+1} = A' Q_j A and k_{j+1} = k_j + tr(Q_j W); the
    continuous node profiles become per-node quadratic forms evaluated on
    demand, so the model is exact everywhere (up to the filter taper) with
    no interpolation. No atoms are declared: the whole spectral content
    rides in the continuous component, which is what the predictor and the
    controller consume.
    """
    dim = 2 * (state_dim + control_dim)
    a = np.asarray(transition, dtype=float)
    if a.shape != (dim, dim):
        raise ValueError(f"transition must be {(dim, dim)}, got {a.shape}")
    w_cov = np.zeros((dim, dim)) if noise_cov is None else np.asarray(noise_cov, dtype=float)
    n_q = quadrature_size if quadrature_size is not None else order + 64
    if n_q <= order:
        raise ValueError(f"quadrature size {n_q} must exceed the order {order}")
    nodes = quadrature_nodes(n_q)
    weights = make_filter(filter_kind).weights(order)

    analytic: dict[str, Callable[[np.ndarray], np.ndarray]] = {}
    continuous: dict[str, np.ndarray] = {}
    coefficients: dict[str, ExpansionCoefficients] = {}
    base = np.zeros((1, dim))

    lags = np.arange(order + 1)
    cos_table = np.cos(np.outer(lags, nodes))  # (N+1, N_q)
    taper = np.where(lags == 0, 1.0, 2.0)[:, None] * weights[:, None] * cos_table

    for label in sorted(forms):
        q = np.asarray(forms[label], dtype=float)
        if q.shape != (dim, dim):
            raise ValueError(f"form {label!r} must be {(dim, dim)}, got {q.shape}")
        q_stack = np.empty((order + 1, dim, dim))
        k_seq = np.empty(order + 1)
        qj = q.copy()
        kj = 0.0
        for j in range(order + 1):
            q_stack[j] = qj
            k_seq[j] = kj
            kj = kj + float(np.sum(qj * w_cov))
            qj = a.T @ qj @ a
        # Node forms W_n = sum_j taper[j, n] Q_j, offsets kappa_n likewise.
        node_forms = np.einsum("jn,jab->nab", taper, q_stack) / (2.0 * np.pi)
        node_offsets = taper.T @ k_seq / (2.0 * np.pi)

        def profile(packed: np.ndarray, nf=node_forms, no=node_offsets) -> np.ndarray:
            vals = np.einsum("nab,a,b->n", nf, packed, packed) + no
            return vals.astype(complex)

        analytic[label] = profile
        continuous[label] = np.zeros((1, n_q), dtype=complex)
        coefficients[label] = ExpansionCoefficients(np.zeros(0, dtype=complex), 0.0)

    return KoopmanSpectralModel(
        eigenpairs=[],
        coefficients=coefficients,
        continuous=continuous,
        node_thetas=nodes,
        base_states=base,
        state_dim=state_dim,
        control_dim=control_dim,
        order=order,
        filter_kind=filter_kind,
        analytic_eigen=None,
        analytic_continuous=analytic,
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _complex_out(arr: np.ndarray) -> list:
    flat = np.asarray(arr, dtype=complex)
    return [[float(z.real), float(z.imag)] for z in flat.ravel()]


def _complex_in(data: list, shape: tuple[int, ...]) -> np.ndarray:
    flat = np.array([complex(re, im) for re, im in data], dtype=complex)
    return flat.reshape(shape)


def _base_checksum(base_states: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(base_states, dtype=float).tobytes()).hexdigest()


def save_model(model: KoopmanSpectralModel, path) -> None:
    """Write the model as a single schema-tagged JSON document.

    The serialization is canonical (sorted keys, fixed separators, repr
    floats), so save -> load -> save is byte identical. Models with
    analytic evaluators have no tabular content to persist and are
    rejected.
    """
    if model.is_analytic:
        raise ModelFormatError("models with analytic evaluators cannot be serialized")
    doc = {
        "schema": MODEL_SCHEMA,
        "state_dim": model.state_dim,
        "control_dim": model.control_dim,
        "order": model.order,
        "filter_kind": model.filter_kind,
        "quadrature_size": model.quadrature_size,
        "node_thetas": [float(t) for t in model.node_thetas],
        "base_states": [[float(v) for v in row] for row in model.base_states],
        "base_checksum": _base_checksum(model.base_states),
        "eigenpairs": [
            {
                "theta": float(ep.theta),
                "normalization": float(ep.normalization),
                "source": ep.source_label,
                "table": _complex_out(ep.table),
            }
            for ep in model.eigenpairs
        ],
        "observables": {
            label: {
                "coefficients": _complex_out(model.coefficients[label].coefficients),
                "residual": float(model.coefficients[label].residual),
                "continuous": _complex_out(model.continuous[label]),
            }
            for label in model.observable_labels()
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_model(path) -> KoopmanSpectralModel:
    """Read a model document, verifying schema tag and sample-set checksum."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not a valid model document: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema") != MODEL_SCHEMA:
        raise ModelFormatError(
            f"schema mismatch: expected {MODEL_SCHEMA!r}, found {doc.get('schema')!r}"
        )
    base = np.array(doc["base_states"], dtype=float)
    if base.ndim == 1:
        base = base.reshape(0, 2 * (doc["state_dim"] + doc["control_dim"]))
    if _base_checksum(base) != doc["base_checksum"]:
        raise ModelFormatError("state sample set checksum mismatch")
    n_q = doc["quadrature_size"]
    b = len(base)
    eigenpairs = [
        EigenPair(
            rec["theta"],
            _complex_in(rec["table"], (b,)),
            rec["normalization"],
            rec["source"],
        )
        for rec in doc["eigenpairs"]
    ]
    coefficients = {}
    continuous = {}
    for label, rec in doc["observables"].items():
        coefficients[label] = ExpansionCoefficients(
            _complex_in(rec["coefficients"], (len(rec["coefficients"]),)), rec["residual"]
        )
        continuous[label] = _complex_in(rec["continuous"], (b, n_q))
    return KoopmanSpectralModel(
        eigenpairs=eigenpairs,
        coefficients=coefficients,
        continuous=continuous,
        node_thetas=np.array(doc["node_thetas"], dtype=float),
        base_states=base,
        state_dim=doc["state_dim"],
        control_dim=doc["control_dim"],
        order=doc["order"],
        filter_kind=doc["filter_kind"],
    )
