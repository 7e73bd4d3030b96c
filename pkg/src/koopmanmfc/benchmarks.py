"""Benchmark system registry.

Every benchmark bundles the dynamics, a behavior policy, optional costs,
and analytically known spectral truth where one exists (used by the
convergence studies; truth values are computed at call time, never stored
as tables). The circle systems are measure preserving for the uniform law
by construction; the linear systems are sampled from their stationary law
through a burn-in chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import (
    AggregatedState,
    CostSpec,
    MeanFieldSystem,
    NoiseModel,
    StationaryPolicy,
    as_rng,
)

__all__ = [
    "Benchmark",
    "SpectralTruth",
    "LqMeanFieldParams",
    "make_benchmark",
    "benchmark_names",
    "wrap_angle",
]


def wrap_angle(t):
    """Map angles into [-pi, pi)."""
    return (t + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(eq=False)
class SpectralTruth:
    """Known spectral measure: point masses plus a flat density level."""

    atoms: list[tuple[float, float]] = field(default_factory=list)
    flat_level: float = 0.0

    def integrate(self, test_fn: Callable[[np.ndarray], np.ndarray]) -> float:
        """Integral of a test function against the truth measure."""
        total = sum(w * float(np.real(test_fn(np.array([t]))[0])) for t, w in self.atoms)
        if self.flat_level != 0.0:
            grid = -np.pi + 2.0 * np.pi * np.arange(4096) / 4096
            total += self.flat_level * float(np.real(test_fn(grid)).sum()) * 2.0 * np.pi / 4096
        return total


@dataclass(eq=False)
class Benchmark:
    """A named system with its policy, costs, and initial-state sampling."""

    name: str
    kind: str
    params: dict
    system: MeanFieldSystem
    policy: StationaryPolicy
    costs: CostSpec | None = None
    _initial: Callable[[np.random.Generator], AggregatedState] | None = None
    _sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None
    _truth: Callable[[str, dict], SpectralTruth | None] | None = None

    def initial_state(self, rng) -> AggregatedState:
        """One initial aggregated state, drawn from the benchmark's law."""
        return self._initial(as_rng(rng))

    def initial_sampler(self, rng, count: int) -> np.ndarray:
        """(count, n) initial individual states for ensemble simulation."""
        return self._sampler(as_rng(rng), count)

    def spectral_truth(self, observable_name: str, params: dict | None = None) -> SpectralTruth | None:
        """Analytic spectral measure for the named observable, if known."""
        if self._truth is None:
            return None
        return self._truth(observable_name, params or {})


def _zero_diffusion(x, mu, u, rho):
    return np.zeros_like(x)


def _unit_diffusion(x, mu, u, rho):
    return np.ones_like(x)


# ---------------------------------------------------------------------------
# Circle benchmarks
# ---------------------------------------------------------------------------


def _circle_rotation(alpha: float = 2.0) -> Benchmark:
    system = MeanFieldSystem(
        state_dim=1,
        control_dim=0,
        drift=lambda x, mu, u, rho: wrap_angle(x + alpha),
        diffusion=_zero_diffusion,
        state_noise=NoiseModel("zero", 0.0, 1),
    )

    def truth(obs_name: str, params: dict) -> SpectralTruth | None:
        if obs_name == "harmonic":
            k = int(params.get("k", 1))
            return SpectralTruth(atoms=[(float(wrap_angle(k * alpha)), 1.0)])
        return None

    return Benchmark(
        name=f"circle-rotation(alpha={alpha})",
        kind="circle-rotation",
        params={"alpha": alpha},
        system=system,
        policy=StationaryPolicy.zero(0),
        _initial=lambda rng: _circle_state(rng),
        _sampler=lambda rng, m: rng.uniform(-np.pi, np.pi, (m, 1)),
        _truth=truth,
    )


def _doubling_map() -> Benchmark:
    system = MeanFieldSystem(
        state_dim=1,
        control_dim=0,
        drift=lambda x, mu, u, rho: wrap_angle(2.0 * x),
        diffusion=_zero_diffusion,
        state_noise=NoiseModel("zero", 0.0, 1),
    )

    def truth(obs_name: str, params: dict) -> SpectralTruth | None:
        if obs_name == "harmonic" and int(params.get("k", 1)) != 0:
            # Mixing: zero-mean harmonics carry a flat (Lebesgue) spectrum.
            return SpectralTruth(flat_level=1.0 / (2.0 * np.pi))
        return None

    return Benchmark(
        name="doubling-map",
        kind="doubling-map",
        params={},
        system=system,
        policy=StationaryPolicy.zero(0),
        _initial=lambda rng: _circle_state(rng),
        _sampler=lambda rng, m: rng.uniform(-np.pi, np.pi, (m, 1)),
        _truth=truth,
    )


def _circle_state(rng) -> AggregatedState:
    z = float(rng.uniform(-np.pi, np.pi))
    return AggregatedState.of(z, z)


# ---------------------------------------------------------------------------
# Linear chains
# ---------------------------------------------------------------------------


def _iid_chain(family: str = "uniform", scale: float = 1.0) -> Benchmark:
    noise = NoiseModel(family, scale, 1)
    system = MeanFieldSystem(
        state_dim=1,
        control_dim=0,
        drift=lambda x, mu, u, rho: np.zeros_like(x),
        diffusion=_unit_diffusion,
        state_noise=noise,
    )

    def truth(obs_name: str, params: dict) -> SpectralTruth | None:
        if obs_name == "coordinate" and params.get("part", "x") == "x":
            # x_k i.i.d. zero mean: white spectrum, density var / (2 pi).
            return SpectralTruth(flat_level=noise.stddev**2 / (2.0 * np.pi))
        return None

    def initial(rng) -> AggregatedState:
        z = float(noise.sample(rng)[0])
        return AggregatedState.of(z, 0.0)

    return Benchmark(
        name=f"iid-chain({family}, scale={scale})",
        kind="iid-chain",
        params={"family": family, "scale": scale},
        system=system,
        policy=StationaryPolicy.zero(0),
        _initial=initial,
        _sampler=lambda rng, m: noise.sample(rng, m),
        _truth=truth,
    )


def _scalar_linear_meanfield(
    a: float = 0.9, c: float = 0.0, noise_scale: float = 0.2, burn_in: int = 300
) -> Benchmark:
    if abs(a + c) >= 1.0:
        raise ValueError("scalar-linear-meanfield requires |a + c| < 1 for a stationary law")
    noise = NoiseModel("gaussian", noise_scale, 1)
    system = MeanFieldSystem(
        state_dim=1,
        control_dim=0,
        drift=lambda x, mu, u, rho: a * x + c * mu,
        diffusion=_unit_diffusion,
        state_noise=noise,
    )

    def initial(rng) -> AggregatedState:
        # Burn-in chain: approximate draw from the joint (x, mu) stationary law.
        spread = noise_scale / np.sqrt(max(1.0 - (a + c) ** 2, 1e-12))
        x = float(rng.normal(0.0, spread))
        mu = x
        for _ in range(burn_in):
            b = a * x + c * mu
            x = b + float(noise.sample(rng)[0])
            mu = b
        return AggregatedState.of(x, mu)

    def sampler(rng, m: int) -> np.ndarray:
        spread = noise_scale / np.sqrt(max(1.0 - (a + c) ** 2, 1e-12))
        x = rng.normal(0.0, spread, (m, 1))
        mu = x.copy()
        for _ in range(burn_in):
            b = a * x + c * mu
            x = b + noise.sample(rng, m)
            mu = b
        return x

    return Benchmark(
        name=f"scalar-linear-meanfield(a={a}, c={c}, noise={noise_scale})",
        kind="scalar-linear-meanfield",
        params={"a": a, "c": c, "noise_scale": noise_scale},
        system=system,
        policy=StationaryPolicy.zero(0),
        _initial=initial,
        _sampler=sampler,
    )


# ---------------------------------------------------------------------------
# LQ mean-field benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LqMeanFieldParams:
    """Scalar linear-quadratic mean-field control problem.

    Dynamics x' = a x + c mu + b_u u + sigma w with paper-literal mean
    update; costs F = q_x x^2 + q_mu mu^2, C = r_u u^2, G = g_x x^2 +
    g_mu mu^2, H = 0 over the given horizon. The behavior policy is
    pi(x) = -behavior_gain * x plus uniform exploration noise; a gain of
    None selects the stationary Riccati gain of the collapsed scalar
    problem (x0 = mu0 keeps the deterministic flow on the x = mu manifold).
    """

    a: float = 1.05
    c: float = 0.2
    b_u: float = 1.0
    sigma: float = 0.0
    q_x: float = 1.0
    q_mu: float = 0.5
    r_u: float = 1.0
    g_x: float = 2.0
    g_mu: float = 0.0
    horizon: int = 10
    x0: float = 1.0
    u_lo: float = -3.0
    u_hi: float = 3.0
    behavior_gain: float | None = None
    explore_scale: float = 0.8

    def collapsed_gain(self) -> float:
        """Stationary Riccati gain of the collapsed problem on x = mu."""
        if self.behavior_gain is not None:
            return float(self.behavior_gain)
        a_bar = self.a + self.c
        q_bar = self.q_x + self.q_mu
        b, r = self.b_u, self.r_u
        p = q_bar
        for _ in range(500):
            den = r + b**2 * p
            if den <= 0:  # cost-free problem: the passive policy is optimal
                return 0.0
            p = q_bar + a_bar**2 * p - (a_bar * b * p) ** 2 / den
        den = r + b**2 * p
        return float(a_bar * b * p / den) if den > 0 else 0.0

    def closed_loop_matrix(self, gain: float) -> np.ndarray:
        """Linear map of y = (x, mu, u, rho) under the gain policy, no noise."""
        row = np.array([self.a, self.c, self.b_u, 0.0])
        return np.vstack([row, row, -gain * row, -gain * row])

    def cost_quadratic_forms(self) -> dict[str, np.ndarray]:
        """4x4 quadratic forms of F, C, G, H on packed y."""
        forms = {
            "F": np.diag([self.q_x, self.q_mu, 0.0, 0.0]),
            "C": np.diag([0.0, 0.0, self.r_u, 0.0]),
            "G": np.diag([self.g_x, self.g_mu, 0.0, 0.0]),
            "H": np.zeros((4, 4)),
        }
        return forms

    def oracle_matrices(self) -> dict[str, np.ndarray]:
        """Joint-state (x, mu) LQ data for backward induction."""
        return {
            "A": np.array([[self.a, self.c], [self.a, self.c]]),
            "B": np.array([[self.b_u], [self.b_u]]),
            "Q": np.diag([self.q_x, self.q_mu]),
            "R": np.array([[self.r_u]]),
            "Qf": np.diag([self.g_x, self.g_mu]),
            "Rf": np.zeros((1, 1)),
            "noise_cov": np.diag([self.sigma**2, 0.0]),
            "s0": np.array([self.x0, self.x0]),
        }


def _lq_meanfield(**kwargs) -> Benchmark:
    params = LqMeanFieldParams(**kwargs)
    gain = params.collapsed_gain()
    noise = NoiseModel("gaussian" if params.sigma > 0 else "zero", params.sigma, 1)
    system = MeanFieldSystem(
        state_dim=1,
        control_dim=1,
        drift=lambda x, mu, u, rho: params.a * x + params.c * mu + params.b_u * u,
        diffusion=_unit_diffusion,
        state_noise=noise,
    )
    policy = StationaryPolicy(
        mean_map=lambda x: -gain * x,
        randomization=NoiseModel(
            "uniform" if params.explore_scale > 0 else "zero", params.explore_scale, 1
        ),
    )
    costs = CostSpec(
        stage_state=lambda x, mu: params.q_x * np.sum(x * x, axis=-1)
        + params.q_mu * np.sum(mu * mu, axis=-1),
        stage_control=lambda u, rho: params.r_u * np.sum(u * u, axis=-1),
        terminal_state=lambda x, mu: params.g_x * np.sum(x * x, axis=-1)
        + params.g_mu * np.sum(mu * mu, axis=-1),
        terminal_control=lambda u, rho: 0.0 * np.sum(u * u, axis=-1),
        horizon=params.horizon,
    )

    def initial(rng) -> AggregatedState:
        x0 = params.x0
        u0 = -gain * x0
        return AggregatedState.of(x0, x0, u0, u0)

    bench = Benchmark(
        name=f"lq-meanfield(a={params.a}, c={params.c})",
        kind="lq-meanfield",
        params={"spec": params, "gain": gain},
        system=system,
        policy=policy,
        costs=costs,
        _initial=initial,
        _sampler=lambda rng, m: np.full((m, 1), params.x0),
    )
    return bench


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

_BUILDERS: dict[str, Callable[..., Benchmark]] = {
    "circle-rotation": _circle_rotation,
    "doubling-map": _doubling_map,
    "iid-chain": _iid_chain,
    "scalar-linear-meanfield": _scalar_linear_meanfield,
    "lq-meanfield": _lq_meanfield,
}


def benchmark_names() -> tuple[str, ...]:
    return tuple(sorted(_BUILDERS))


def make_benchmark(name: str, **params) -> Benchmark:
    """Build a registry benchmark by name; unknown names list the registry."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise LookupError(
            f"unknown benchmark {name!r}; available: {', '.join(benchmark_names())}"
        ) from None
    return builder(**params)
