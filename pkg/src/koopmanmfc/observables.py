"""Observation functions on the aggregated state space and empirical inner products.

Observables are complex-valued, square-integrable functions of the
aggregated state y = (x, mu, u, rho). Everything downstream (correlation
sequences, spectral densities, eigenfunction tables) is built from sampled
observable values, so observables may carry an optional vectorized
evaluator over component arrays for fast batch evaluation; the registry
builtins all do.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dynamics import AggregatedState, CostSpec, Trajectory

__all__ = [
    "Observable",
    "SampledObservable",
    "ObservableRegistryError",
    "builtin_observable",
    "registry_names",
    "cost_observable",
    "sample_observable",
    "empirical_inner_product",
]

# Vectorized evaluator signature: (xs, mus, us, rhos) each (L, dim) -> (L,) complex.
VecEvaluator = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


class ObservableRegistryError(LookupError):
    """Requested observable name is not in the registry."""


@dataclass(frozen=True, eq=False)
class Observable:
    """A labeled evaluator y -> complex scalar.

    codomain "real" tags observables whose values carry no imaginary part;
    the spectral machinery treats everything as complex internally.
    """

    fn: Callable[[AggregatedState], complex]
    label: str
    codomain: str = "complex"
    vec_fn: VecEvaluator | None = None

    def __post_init__(self) -> None:
        if self.codomain not in ("real", "complex"):
            raise ValueError("codomain must be 'real' or 'complex'")

    def __call__(self, y: AggregatedState) -> complex:
        return complex(self.fn(y))


@dataclass(eq=False)
class SampledObservable:
    """Observable values aligned with a state sample set."""

    values: np.ndarray
    label: str = ""

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=complex)

    def __len__(self) -> int:
        return len(self.values)


def _component_arrays(samples) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(samples, Trajectory):
        return samples.xs, samples.mus, samples.us, samples.rhos
    states = list(samples)
    if not states:
        raise ValueError("empty state sample set")
    xs = np.stack([s.x for s in states])
    mus = np.stack([s.mu for s in states])
    us = np.stack([s.u for s in states])
    rhos = np.stack([s.rho for s in states])
    return xs, mus, us, rhos


def sample_observable(
    obs: Observable, samples: Trajectory | Sequence[AggregatedState]
) -> SampledObservable:
    """Evaluate an observable over a sample set, vectorized when possible."""
    xs, mus, us, rhos = _component_arrays(samples)
    if len(xs) == 0:
        raise ValueError("empty state sample set")
    if obs.vec_fn is not None:
        values = np.asarray(obs.vec_fn(xs, mus, us, rhos), dtype=complex)
    else:
        values = np.array(
            [obs.fn(AggregatedState(x, m, u, r)) for x, m, u, r in zip(xs, mus, us, rhos)],
            dtype=complex,
        )
    return SampledObservable(values, obs.label)


def empirical_inner_product(
    f: Observable,
    g: Observable,
    samples: Trajectory | Sequence[AggregatedState],
) -> complex:
    """(1/L) sum_i conj(f(y_i)) g(y_i) over the sample set.

    The reference measure is the empirical distribution of the samples; long
    trajectories of measure-preserving systems sample the invariant law.
    Summation is numpy fixed-order pairwise, so results are reproducible.
    """
    fv = sample_observable(f, samples).values
    gv = sample_observable(g, samples).values
    return complex(np.sum(np.conj(fv) * gv) / len(fv))


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

_PARTS = ("x", "mu", "u", "rho")


def _coordinate(index: int = 0, part: str = "x") -> Observable:
    if part not in _PARTS:
        raise ValueError(f"part must be one of {_PARTS}")
    slot = _PARTS.index(part)

    def fn(y: AggregatedState) -> complex:
        return complex((y.x, y.mu, y.u, y.rho)[slot][index])

    def vec(xs, mus, us, rhos):
        return (xs, mus, us, rhos)[slot][:, index].astype(complex)

    return Observable(fn, f"coordinate({part}[{index}])", "real", vec)


def _harmonic(k: int = 1) -> Observable:
    """Circle harmonic e^{i k theta}; the angle is the first state coordinate."""

    def fn(y: AggregatedState) -> complex:
        return complex(np.exp(1j * k * y.x[0]))

    def vec(xs, mus, us, rhos):
        return np.exp(1j * k * xs[:, 0])

    return Observable(fn, f"harmonic({k})", "complex", vec)


def _monomial(px: int = 0, pmu: int = 0, pu: int = 0, prho: int = 0, index: int = 0) -> Observable:
    def fn(y: AggregatedState) -> complex:
        val = 1.0
        if px:
            val *= y.x[index] ** px
        if pmu:
            val *= y.mu[index] ** pmu
        if pu:
            val *= y.u[index] ** pu
        if prho:
            val *= y.rho[index] ** prho
        return complex(val)

    def vec(xs, mus, us, rhos):
        val = np.ones(len(xs))
        if px:
            val = val * xs[:, index] ** px
        if pmu:
            val = val * mus[:, index] ** pmu
        if pu:
            val = val * us[:, index] ** pu
        if prho:
            val = val * rhos[:, index] ** prho
        return val.astype(complex)

    return Observable(fn, f"monomial(x^{px} mu^{pmu} u^{pu} rho^{prho})", "real", vec)


def _constant(value: float = 1.0) -> Observable:
    c = complex(value)
    return Observable(
        lambda y: c,
        f"constant({value})",
        "real" if c.imag == 0 else "complex",
        lambda xs, mus, us, rhos: np.full(len(xs), c),
    )


def _zero() -> Observable:
    return Observable(
        lambda y: 0j, "zero", "real", lambda xs, mus, us, rhos: np.zeros(len(xs), dtype=complex)
    )


_REGISTRY: dict[str, Callable[..., Observable]] = {
    "coordinate": _coordinate,
    "harmonic": _harmonic,
    "monomial": _monomial,
    "constant": _constant,
    "zero": _zero,
}


def registry_names() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def builtin_observable(name: str, **params) -> Observable:
    """Construct a registry observable by name.

    Raises ObservableRegistryError listing the available names when the name
    is unknown.
    """
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ObservableRegistryError(
            f"unknown observable {name!r}; available: {', '.join(registry_names())}"
        ) from None
    return factory(**params)


def cost_observable(costs: CostSpec, which: str, vectorized: bool = True) -> Observable:
    """Lift one of the cost maps F, C, G, H to an observable on y.

    F and G read (x, mu); C and H read (u, rho). With vectorized=True the
    cost map must broadcast over leading axes (all registry benchmarks do).
    """
    if which in ("F", "G"):
        cost_fn = costs.stage_state if which == "F" else costs.terminal_state
        fn = lambda y: complex(cost_fn(y.x, y.mu))
        vec = (lambda xs, mus, us, rhos: np.asarray(cost_fn(xs, mus), dtype=complex)) if vectorized else None
    elif which in ("C", "H"):
        cost_fn = costs.stage_control if which == "C" else costs.terminal_control
        fn = lambda y: complex(cost_fn(y.u, y.rho))
        vec = (lambda xs, mus, us, rhos: np.asarray(cost_fn(us, rhos), dtype=complex)) if vectorized else None
    else:
        raise ValueError("which must be one of 'F', 'C', 'G', 'H'")
    return Observable(fn, f"cost-{which}", "real", vec)
