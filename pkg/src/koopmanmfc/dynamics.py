"""Discrete-time stochastic mean-field systems and their simulation.

Everything here advances the aggregated state y = (x, mu, u, rho):
individual state, mean-state coordinate, control, mean-control coordinate.
Two mean-propagation modes are supported. "paper-literal" pushes the mean
coordinate through the drift of the realized state; "ensemble" replaces the
mean coordinates by empirical means over a synchronized particle
population. For zero diffusion and a deterministic policy the two coincide.

All randomness flows through numpy Generators. Identical (system, policy,
seed, mode) inputs produce bit-identical trajectories; reductions use fixed
array order throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, ClassVar, Sequence

import numpy as np

__all__ = [
    "MapEvaluationError",
    "NoiseModel",
    "MeanFieldSystem",
    "AggregatedState",
    "StationaryPolicy",
    "CostSpec",
    "Trajectory",
    "EnsembleResult",
    "step_uncontrolled",
    "step_controlled",
    "simulate_trajectory",
    "simulate_realizations",
    "simulate_ensemble",
    "evaluate_cost",
    "lipschitz_ratio",
    "as_rng",
]


class MapEvaluationError(RuntimeError):
    """A drift, diffusion, policy, or cost map produced a non-finite value."""


def as_rng(rng: int | np.random.Generator | None) -> np.random.Generator:
    """Coerce a seed or Generator into a Generator (None means seed 0)."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(0 if rng is None else rng)


def _seed_of(rng) -> int | None:
    return rng if isinstance(rng, (int, np.integer)) else None


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean noise in one of three families: zero, uniform, gaussian.

    "uniform" draws from [-scale, scale]; "gaussian" has standard deviation
    `scale`. These are i.i.d. sequences, a valid special case of the
    martingale-difference property the dynamics require. Draws are
    reproducible under a fixed generator.
    """

    family: str = "zero"
    scale: float = 0.0
    dim: int = 1

    FAMILIES: ClassVar[tuple[str, ...]] = ("zero", "uniform", "gaussian")

    def __post_init__(self) -> None:
        if self.family not in self.FAMILIES:
            raise ValueError(
                f"unknown noise family {self.family!r}; expected one of {self.FAMILIES}"
            )
        if self.dim < 0:
            raise ValueError("noise dimension must be nonnegative")
        if not np.isfinite(self.scale) or self.scale < 0:
            raise ValueError("noise scale must be finite and nonnegative")

    @property
    def stddev(self) -> float:
        """Per-coordinate standard deviation of one draw."""
        if self.family == "uniform":
            return self.scale / np.sqrt(3.0)
        if self.family == "gaussian":
            return self.scale
        return 0.0

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """One draw of shape (dim,), or a batch of shape (size, dim)."""
        shape = (self.dim,) if size is None else (size, self.dim)
        if self.family == "zero" or self.scale == 0.0:
            return np.zeros(shape)
        if self.family == "uniform":
            return rng.uniform(-self.scale, self.scale, shape)
        return rng.normal(0.0, self.scale, shape)


# ---------------------------------------------------------------------------
# System, policy, cost descriptions
# ---------------------------------------------------------------------------

# Drift b(x, mu, u, rho) -> R^n and diffusion sigma(x, mu, u, rho) -> R^{n x n}.
# Maps must accept stacked inputs with a leading batch axis (all registry
# systems are plain numpy expressions, which broadcast naturally); the
# per-sample step functions call them on unbatched vectors.
DriftMap = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MeanFieldSystem:
    """Dynamics description: x' = b(x, mu, u, rho) + sigma(x, mu, u, rho) w.

    Uncontrolled systems use control_dim 0; drift and diffusion then receive
    empty control vectors and are free to ignore them.
    """

    state_dim: int
    control_dim: int
    drift: DriftMap
    diffusion: DriftMap
    state_noise: NoiseModel

    def __post_init__(self) -> None:
        if self.state_dim < 1:
            raise ValueError("state_dim must be positive")
        if self.control_dim < 0:
            raise ValueError("control_dim must be nonnegative")
        if self.state_noise.dim != self.state_dim:
            raise ValueError(
                f"state_noise dimension {self.state_noise.dim} != state_dim {self.state_dim}"
            )


@dataclass(frozen=True)
class StationaryPolicy:
    """Stationary random control policy u = pi(x) + v with zero-mean v."""

    mean_map: Callable[[np.ndarray], np.ndarray]
    randomization: NoiseModel

    @classmethod
    def zero(cls, control_dim: int) -> "StationaryPolicy":
        return cls(
            mean_map=lambda x: np.zeros(control_dim),
            randomization=NoiseModel("zero", 0.0, control_dim),
        )


@dataclass(frozen=True)
class CostSpec:
    """Stage and terminal cost maps with their horizon.

    stage_state F(x, mu) and terminal_state G(x, mu) act on states;
    stage_control C(u, rho) and terminal_control H(u, rho) act on controls.
    The accumulated cost is sum_{k<N} [F + C] plus terminal G and H at N.
    """

    stage_state: Callable[[np.ndarray, np.ndarray], float]
    stage_control: Callable[[np.ndarray, np.ndarray], float]
    terminal_state: Callable[[np.ndarray, np.ndarray], float]
    terminal_control: Callable[[np.ndarray, np.ndarray], float]
    horizon: int

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("cost horizon must be positive")

    @classmethod
    def zero(cls, horizon: int = 1) -> "CostSpec":
        z = lambda a, b: 0.0
        return cls(z, z, z, z, horizon)


@dataclass(frozen=True, eq=False)
class AggregatedState:
    """One aggregated state y = (x, mu, u, rho); components finite vectors."""

    x: np.ndarray
    mu: np.ndarray
    u: np.ndarray
    rho: np.ndarray

    def __post_init__(self) -> None:
        for name in ("x", "mu", "u", "rho"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite component {name!r} in aggregated state")
            object.__setattr__(self, name, v)
        if self.x.shape != self.mu.shape:
            raise ValueError("x and mu must have equal shapes")
        if self.u.shape != self.rho.shape:
            raise ValueError("u and rho must have equal shapes")

    @classmethod
    def of(cls, x, mu, u=(), rho=()) -> "AggregatedState":
        return cls(np.atleast_1d(x), np.atleast_1d(mu), np.atleast_1d(u), np.atleast_1d(rho))

    def packed(self) -> np.ndarray:
        """Flat vector (x, mu, u, rho); the canonical coordinate order."""
        return np.concatenate([self.x, self.mu, self.u, self.rho])

    @classmethod
    def unpack(cls, vec: np.ndarray, state_dim: int, control_dim: int) -> "AggregatedState":
        n, m = state_dim, control_dim
        if vec.shape[-1] != 2 * (n + m):
            raise ValueError(f"packed vector has length {vec.shape[-1]}, expected {2 * (n + m)}")
        return cls(vec[:n], vec[n : 2 * n], vec[2 * n : 2 * n + m], vec[2 * n + m :])


@dataclass(eq=False)
class Trajectory:
    """Array-backed sequence of aggregated states y_0 .. y_K.

    xs, mus have shape (K+1, n); us, rhos have shape (K+1, m). `seed` is the
    integer seed used to generate the run when one was supplied, and `mode`
    tags the mean-propagation mode.
    """

    xs: np.ndarray
    mus: np.ndarray
    us: np.ndarray
    rhos: np.ndarray
    seed: int | None = None
    mode: str = "paper-literal"

    def __post_init__(self) -> None:
        if not (len(self.xs) == len(self.mus) == len(self.us) == len(self.rhos)):
            raise ValueError("trajectory component arrays disagree on length")

    def __len__(self) -> int:
        return len(self.xs)

    @property
    def steps(self) -> int:
        return len(self.xs) - 1

    def state(self, k: int) -> AggregatedState:
        return AggregatedState(self.xs[k], self.mus[k], self.us[k], self.rhos[k])

    def states(self) -> list[AggregatedState]:
        return [self.state(k) for k in range(len(self))]

    def packed(self) -> np.ndarray:
        """(K+1, 2(n+m)) matrix of packed states, canonical order."""
        return np.concatenate([self.xs, self.mus, self.us, self.rhos], axis=1)


# ---------------------------------------------------------------------------
# Map evaluation with finiteness checks
# ---------------------------------------------------------------------------


def _eval_map(name: str, fn, *args) -> np.ndarray:
    out = np.asarray(fn(*args), dtype=float)
    if not np.all(np.isfinite(out)):
        raise MapEvaluationError(f"{name} map returned a non-finite value")
    return out


def _apply_diffusion(sigma: np.ndarray, w: np.ndarray) -> np.ndarray:
    # sigma is an (..., n, n) matrix, or a scalar/elementwise factor that
    # broadcasts against w; w is (n,) or batched (..., n).
    sigma = np.asarray(sigma)
    n = w.shape[-1]
    if sigma.ndim >= 2 and sigma.shape[-2:] == (n, n):
        return np.einsum("...ij,...j->...i", sigma, w)
    return sigma * w


# ---------------------------------------------------------------------------
# Single steps
# ---------------------------------------------------------------------------


def step_uncontrolled(
    system: MeanFieldSystem,
    state: tuple[np.ndarray, np.ndarray],
    rng: int | np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance the uncontrolled pair (x, mu) one step in paper-literal mode.

    x' = b(x, mu) + sigma(x, mu) w and mu' = b(x, mu), with empty control
    arguments passed through to the maps.
    """
    gen = as_rng(rng)
    x, mu = (np.atleast_1d(np.asarray(v, dtype=float)) for v in state)
    empty = np.zeros(system.control_dim)
    b = _eval_map("drift", system.drift, x, mu, empty, empty)
    sig = _eval_map("diffusion", system.diffusion, x, mu, empty, empty)
    w = system.state_noise.sample(gen)
    return b + _apply_diffusion(sig, w), b.copy()


def step_controlled(
    system: MeanFieldSystem,
    policy: StationaryPolicy,
    state: AggregatedState,
    rng: int | np.random.Generator,
) -> AggregatedState:
    """Advance the aggregated state y one step.

    Applies, in order: x' from drift plus diffusion noise, mu' from the
    drift alone, u' = pi(x') + v', rho' = pi(x').
    """
    gen = as_rng(rng)
    b = _eval_map("drift", system.drift, state.x, state.mu, state.u, state.rho)
    sig = _eval_map("diffusion", system.diffusion, state.x, state.mu, state.u, state.rho)
    w = system.state_noise.sample(gen)
    x_next = b + _apply_diffusion(sig, w)
    mu_next = b.copy()
    pi = _eval_map("policy", policy.mean_map, x_next)
    v = policy.randomization.sample(gen)
    return AggregatedState(x_next, mu_next, pi + v, pi.copy())


# ---------------------------------------------------------------------------
# Trajectory and ensemble simulation
# ---------------------------------------------------------------------------


def simulate_trajectory(
    system: MeanFieldSystem,
    policy: StationaryPolicy,
    y0: AggregatedState,
    steps: int,
    rng: int | np.random.Generator,
) -> Trajectory:
    """Iterate step_controlled from y0 for `steps` steps (paper-literal mode)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    gen = as_rng(rng)
    n, m = system.state_dim, system.control_dim
    xs = np.empty((steps + 1, n))
    mus = np.empty((steps + 1, n))
    us = np.empty((steps + 1, m))
    rhos = np.empty((steps + 1, m))
    y = y0
    xs[0], mus[0], us[0], rhos[0] = y.x, y.mu, y.u, y.rho
    for k in range(steps):
        try:
            y = step_controlled(system, policy, y, gen)
        except MapEvaluationError as exc:
            raise MapEvaluationError(f"step {k}: {exc}") from exc
        xs[k + 1], mus[k + 1], us[k + 1], rhos[k + 1] = y.x, y.mu, y.u, y.rho
    return Trajectory(xs, mus, us, rhos, seed=_seed_of(rng), mode="paper-literal")


def simulate_realizations(
    system: MeanFieldSystem,
    policy: StationaryPolicy,
    y0: AggregatedState,
    steps: int,
    count: int,
    rng: int | np.random.Generator,
) -> list[Trajectory]:
    """Independent paper-literal realizations from the same initial state.

    Vectorized over realizations (maps are called on (count, dim) stacks),
    so the count can reach 10^4 cheaply. Each returned trajectory is one
    realization; means are per-realization paper-literal coordinates, not
    population averages.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if count < 1:
        raise ValueError("count must be >= 1")
    gen = as_rng(rng)
    n, m = system.state_dim, system.control_dim
    xs = np.empty((steps + 1, count, n))
    mus = np.empty((steps + 1, count, n))
    us = np.empty((steps + 1, count, m))
    rhos = np.empty((steps + 1, count, m))
    xs[0] = y0.x
    mus[0] = y0.mu
    us[0] = y0.u
    rhos[0] = y0.rho
    for k in range(steps):
        try:
            b = _eval_map("drift", system.drift, xs[k], mus[k], us[k], rhos[k])
            sig = _eval_map("diffusion", system.diffusion, xs[k], mus[k], us[k], rhos[k])
        except MapEvaluationError as exc:
            raise MapEvaluationError(f"step {k}: {exc}") from exc
        w = system.state_noise.sample(gen, count)
        xs[k + 1] = b + _apply_diffusion(np.asarray(sig), w)
        mus[k + 1] = b
        pi = _eval_map("policy", policy.mean_map, xs[k + 1])
        pi = np.broadcast_to(np.asarray(pi, dtype=float), (count, m))
        us[k + 1] = pi + policy.randomization.sample(gen, count)
        rhos[k + 1] = pi
    seed = _seed_of(rng)
    return [
        Trajectory(xs[:, r], mus[:, r], us[:, r], rhos[:, r], seed=seed, mode="paper-literal")
        for r in range(count)
    ]


@dataclass(eq=False)
class EnsembleResult:
    """Synchronized particle ensemble with shared empirical-mean coupling.

    xs, us are (K+1, M, dim) per-particle arrays; mus, rhos are the shared
    empirical means, shape (K+1, dim). `particle(i)` views one particle as a
    Trajectory whose mean coordinates are the shared ensemble means.
    """

    xs: np.ndarray
    us: np.ndarray
    mus: np.ndarray
    rhos: np.ndarray
    seed: int | None = None
    mode: str = "ensemble"

    @property
    def n_particles(self) -> int:
        return self.xs.shape[1]

    def __len__(self) -> int:
        return self.xs.shape[0]

    def particle(self, i: int) -> Trajectory:
        return Trajectory(
            self.xs[:, i], self.mus.copy(), self.us[:, i], self.rhos.copy(),
            seed=self.seed, mode=self.mode,
        )

    def trajectories(self) -> list[Trajectory]:
        return [self.particle(i) for i in range(self.n_particles)]


def simulate_ensemble(
    system: MeanFieldSystem,
    policy: StationaryPolicy,
    initial_law: Callable[[np.random.Generator, int], np.ndarray],
    particles: int,
    steps: int,
    rng: int | np.random.Generator,
) -> EnsembleResult:
    """Advance M particles whose mean coordinates are empirical means.

    initial_law(rng, M) samples the (M, n) initial states. At every step the
    shared mu_k, rho_k are the empirical means of the particle states and
    controls; all particles advance synchronously against those means. Noise
    is drawn in fixed particle order from one stream, so runs are
    reproducible bit-for-bit under a fixed seed.
    """
    if particles < 1:
        raise ValueError("particles must be >= 1")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    gen = as_rng(rng)
    n, m = system.state_dim, system.control_dim
    x = np.asarray(initial_law(gen, particles), dtype=float).reshape(particles, n)
    pi0 = np.broadcast_to(
        np.asarray(_eval_map("policy", policy.mean_map, x), dtype=float), (particles, m)
    )
    u = pi0 + policy.randomization.sample(gen, particles)

    xs = np.empty((steps + 1, particles, n))
    us = np.empty((steps + 1, particles, m))
    mus = np.empty((steps + 1, n))
    rhos = np.empty((steps + 1, m))
    xs[0], us[0] = x, u
    mus[0] = x.mean(axis=0)
    rhos[0] = u.mean(axis=0)
    for k in range(steps):
        mu_k = np.broadcast_to(mus[k], (particles, n))
        rho_k = np.broadcast_to(rhos[k], (particles, m))
        try:
            b = _eval_map("drift", system.drift, xs[k], mu_k, us[k], rho_k)
            sig = _eval_map("diffusion", system.diffusion, xs[k], mu_k, us[k], rho_k)
        except MapEvaluationError as exc:
            raise MapEvaluationError(f"step {k}: {exc}") from exc
        w = system.state_noise.sample(gen, particles)
        xs[k + 1] = b + _apply_diffusion(np.asarray(sig), w)
        pi = np.broadcast_to(
            np.asarray(_eval_map("policy", policy.mean_map, xs[k + 1]), dtype=float),
            (particles, m),
        )
        us[k + 1] = pi + policy.randomization.sample(gen, particles)
        # Synchronization barrier: empirical means after all particles moved.
        mus[k + 1] = xs[k + 1].mean(axis=0)
        rhos[k + 1] = us[k + 1].mean(axis=0)
    return EnsembleResult(xs, us, mus, rhos, seed=_seed_of(rng))


# ---------------------------------------------------------------------------
# Cost evaluation
# ---------------------------------------------------------------------------


def _cost_of_trajectory(traj: Trajectory, costs: CostSpec) -> float:
    N = costs.horizon
    total = 0.0
    for k in range(N):
        total += float(_eval_map("stage_state", costs.stage_state, traj.xs[k], traj.mus[k]))
        total += float(_eval_map("stage_control", costs.stage_control, traj.us[k], traj.rhos[k]))
    total += float(_eval_map("terminal_state", costs.terminal_state, traj.xs[N], traj.mus[N]))
    total += float(_eval_map("terminal_control", costs.terminal_control, traj.us[N], traj.rhos[N]))
    return total


def evaluate_cost(
    trajectories: Trajectory | EnsembleResult | Sequence[Trajectory],
    costs: CostSpec,
) -> float:
    """Monte Carlo cost estimate: ensemble average of the accumulated cost.

    Each trajectory must carry at least horizon+1 states. Expectations in the
    cost definition are replaced by the average over the supplied
    trajectories (particles).
    """
    if isinstance(trajectories, Trajectory):
        trajs: Sequence[Trajectory] = [trajectories]
    elif isinstance(trajectories, EnsembleResult):
        trajs = trajectories.trajectories()
    else:
        trajs = list(trajectories)
    if not trajs:
        raise ValueError("no trajectories supplied")
    need = costs.horizon + 1
    for t in trajs:
        if len(t) < need:
            raise ValueError(
                f"trajectory has {len(t)} states; horizon {costs.horizon} requires >= {need}"
            )
    return float(np.mean([_cost_of_trajectory(t, costs) for t in trajs]))


# ---------------------------------------------------------------------------
# Lipschitz spot check
# ---------------------------------------------------------------------------


def lipschitz_ratio(
    system: MeanFieldSystem,
    box: tuple[float, float] = (-10.0, 10.0),
    pairs: int = 1000,
    rng: int | np.random.Generator = 0,
) -> tuple[float, float]:
    """Largest sampled finite-difference ratio of drift and diffusion.

    Samples `pairs` random point pairs in the box (componentwise) and
    returns (drift_ratio, diffusion_ratio), the maxima of
    ||f(p) - f(q)|| / ||p - q||. A bounded probe standing in for the
    Lipschitz continuity the dynamics assume.
    """
    gen = as_rng(rng)
    lo, hi = box
    n, m = system.state_dim, system.control_dim
    dim = 2 * (n + m)
    p = gen.uniform(lo, hi, (pairs, dim))
    q = gen.uniform(lo, hi, (pairs, dim))
    drift_max = 0.0
    diff_max = 0.0
    for a, b in zip(p, q):
        ya = AggregatedState.unpack(a, n, m)
        yb = AggregatedState.unpack(b, n, m)
        gap = float(np.linalg.norm(a - b))
        if gap == 0.0:
            continue
        da = _eval_map("drift", system.drift, ya.x, ya.mu, ya.u, ya.rho)
        db = _eval_map("drift", system.drift, yb.x, yb.mu, yb.u, yb.rho)
        sa = _eval_map("diffusion", system.diffusion, ya.x, ya.mu, ya.u, ya.rho)
        sb = _eval_map("diffusion", system.diffusion, yb.x, yb.mu, yb.u, yb.rho)
        drift_max = max(drift_max, float(np.linalg.norm(da - db)) / gap)
        diff_max = max(diff_max, float(np.linalg.norm(sa - sb)) / gap)
    return drift_max, diff_max
