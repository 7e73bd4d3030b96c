"""Spectral measure estimation on the unit circle from trajectory data.

Pipeline: correlation coefficients a_n from sampled observables, filtered
Fourier reconstruction of the measure's density on [-pi, pi), atom
detection through Cesaro harmonic averages, and the operational Lebesgue
decomposition (atoms subtracted off, leaving the absolutely continuous
part).

Conventions. Coefficients are a_n = <f, K^n g> / (2 pi) for n >= 0 with the
negative half implied by a_{-n} = conj(a_n). All kernel sums pair a_n with
e^{-i n theta}, which places the atom of a rotation by alpha at theta =
alpha for both the density and the detector. Sums run in fixed array order,
so every output is reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import Trajectory
from .observables import Observable, sample_observable

__all__ = [
    "FilterFunction",
    "make_filter",
    "CorrelationSequence",
    "SpectralMeasureEstimate",
    "Atom",
    "DetectedAtoms",
    "estimate_correlations",
    "reconstruct_measure",
    "detect_atoms",
    "extract_continuous_part",
    "default_atom_threshold",
    "uniform_grid",
    "hermitian_kernel_sum",
]


# ---------------------------------------------------------------------------
# Filters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FilterFunction:
    """Even taper phi on [-1, 1] with phi(0) = 1 and |phi| <= 1."""

    kind: str
    evaluator: Callable[[np.ndarray], np.ndarray]

    def __call__(self, t) -> np.ndarray:
        return self.evaluator(np.asarray(t, dtype=float))

    def weights(self, order: int) -> np.ndarray:
        """phi(n / order) for n = 0 .. order."""
        return self(np.arange(order + 1) / order)


def make_filter(kind: str) -> FilterFunction:
    """Filter by name: fejer (1 - |t|), cosine (raised cosine), sharp (1)."""
    if kind == "fejer":
        return FilterFunction("fejer", lambda t: np.maximum(0.0, 1.0 - np.abs(t)))
    if kind == "cosine":
        return FilterFunction(
            "cosine", lambda t: np.where(np.abs(t) <= 1.0, 0.5 * (1.0 + np.cos(np.pi * t)), 0.0)
        )
    if kind == "sharp":
        return FilterFunction("sharp", lambda t: np.where(np.abs(t) <= 1.0, 1.0, 0.0))
    raise ValueError(f"unknown filter kind {kind!r}; expected fejer, cosine, or sharp")


# ---------------------------------------------------------------------------
# Correlation sequences
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class CorrelationSequence:
    """Coefficients a_0 .. a_N of the measure induced by observables (f, g).

    The negative half is implicit: a_{-n} = conj(a_n). For f = g the zeroth
    coefficient is real and nonnegative (an empirical |g|^2 average).
    """

    coefficients: np.ndarray
    f_label: str
    g_label: str
    sample_count: int

    def __post_init__(self) -> None:
        self.coefficients = np.asarray(self.coefficients, dtype=complex)
        if self.coefficients.ndim != 1 or len(self.coefficients) < 1:
            raise ValueError("coefficients must be a nonempty 1-d sequence")

    @property
    def order(self) -> int:
        return len(self.coefficients) - 1

    @property
    def a0(self) -> complex:
        return complex(self.coefficients[0])


def estimate_correlations(
    data: Trajectory | Sequence[Trajectory],
    f: Observable,
    g: Observable,
    order: int,
    scheme: str = "ergodic",
) -> CorrelationSequence:
    """Estimate a_n = <f, K^n g> / (2 pi) for n = 0 .. order from data.

    scheme "ergodic": time-offset averaging i = 0 .. S-1-order within each
    trajectory, every lag using the same offset window so that exact
    dynamics give exact coefficients. scheme "ensemble": averages
    conj(f(y_0)) g(y_n) across trajectories, matching the expectation in the
    operator definition when initial states sample the invariant law.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if scheme not in ("ergodic", "ensemble"):
        raise ValueError("scheme must be 'ergodic' or 'ensemble'")
    trajs = [data] if isinstance(data, Trajectory) else list(data)
    if not trajs:
        raise ValueError("no trajectories supplied")
    need = order + 1
    for t in trajs:
        if len(t) < need:
            raise ValueError(
                f"trajectory has {len(t)} states; order {order} requires >= {need}"
            )

    acc = np.zeros(order + 1, dtype=complex)
    count = 0
    for t in trajs:
        fv = sample_observable(f, t).values
        gv = fv if g is f else sample_observable(g, t).values
        if scheme == "ergodic":
            window = len(t) - order
            fw = np.conj(fv[:window])
            for n in range(order + 1):
                acc[n] += np.sum(fw * gv[n : n + window])
            count += window
        else:
            acc += np.conj(fv[0]) * gv[: order + 1]
            count += 1
    coeffs = acc / (2.0 * np.pi * count)
    if not np.all(np.isfinite(coeffs)):
        raise ValueError("correlation estimate produced non-finite coefficients")
    return CorrelationSequence(coeffs, f.label, g.label, count)


# ---------------------------------------------------------------------------
# Kernel sums
# ---------------------------------------------------------------------------


def uniform_grid(size: int) -> np.ndarray:
    """Uniform angles theta_j = -pi + 2 pi j / size, j = 0 .. size-1."""
    if size < 1:
        raise ValueError("grid size must be positive")
    return -np.pi + 2.0 * np.pi * np.arange(size) / size


def hermitian_kernel_sum(
    coefficients: np.ndarray, weights: np.ndarray, thetas: np.ndarray
) -> np.ndarray:
    """sum_{n=-N}^{N} w_|n| c_n e^{-i n theta} with c_{-n} = conj(c_n).

    coefficients holds c_0 .. c_N; weights holds w_0 .. w_N. Phases are
    computed by np.exp per lag (not running products) to keep the
    cancellation identities sharp. Evaluates in lag chunks to bound memory.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    order = len(coefficients) - 1
    out = np.full(thetas.shape, weights[0] * coefficients[0], dtype=complex)
    chunk = 256
    for start in range(1, order + 1, chunk):
        ns = np.arange(start, min(start + chunk, order + 1))
        phases = np.exp(-1j * np.outer(ns, thetas))
        terms = (coefficients[ns, None] * phases).real
        out += 2.0 * np.einsum("n,nt->t", weights[ns], terms)
    return out


# ---------------------------------------------------------------------------
# Density reconstruction
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Atom:
    """Point-mass component at angle theta with complex weight."""

    theta: float
    weight: complex


@dataclass(eq=False)
class DetectedAtoms:
    """Atom list plus the provenance needed to subtract them consistently."""

    atoms: list[Atom]
    order: int
    grid_size: int
    threshold: float

    def __iter__(self):
        return iter(self.atoms)

    def __len__(self) -> int:
        return len(self.atoms)


@dataclass(eq=False)
class SpectralMeasureEstimate:
    """Filtered density on a uniform angle grid, plus detected atoms."""

    grid: np.ndarray
    density: np.ndarray
    atoms: list[Atom] = field(default_factory=list)
    filter_kind: str = "fejer"
    order: int = 0

    @property
    def grid_size(self) -> int:
        return len(self.grid)

    def mass(self) -> complex:
        """Trapezoid quadrature of the density over the periodic grid.

        Equals 2 pi a_0 up to rounding for any filter with phi(0) = 1: the
        uniform-grid rule integrates e^{i n theta} exactly for |n| < grid
        size, so only the n = 0 term survives.
        """
        return complex(np.sum(self.density) * 2.0 * np.pi / self.grid_size)


def reconstruct_measure(
    corr: CorrelationSequence,
    filt: FilterFunction | str,
    grid_size: int,
) -> SpectralMeasureEstimate:
    """Evaluate the filtered series on a uniform grid of the given size.

    The grid must resolve the degree-N trigonometric polynomial; sizes below
    4N are rejected.
    """
    filt = make_filter(filt) if isinstance(filt, str) else filt
    n = corr.order
    if grid_size < 4 * n:
        raise ValueError(f"grid size {grid_size} too coarse; need at least {4 * n}")
    grid = uniform_grid(grid_size)
    weights = filt.weights(n)
    density = hermitian_kernel_sum(corr.coefficients, weights, grid)
    return SpectralMeasureEstimate(grid, density, [], filt.kind, n)


# ---------------------------------------------------------------------------
# Atom detection
# ---------------------------------------------------------------------------


def default_atom_threshold(corr: CorrelationSequence, grid_size: int) -> float:
    """Detection floor 10 * grid_size^{-1/2} * |a_0| * 2 pi."""
    return 10.0 * abs(corr.a0) * 2.0 * np.pi / np.sqrt(grid_size)


def _cesaro_weight(corr: CorrelationSequence, thetas) -> np.ndarray:
    """Atom-mass estimator w(theta) = 2 pi / (2N+1) * sum_n a_n e^{-i n theta}."""
    n = corr.order
    ones = np.ones(n + 1)
    return hermitian_kernel_sum(corr.coefficients, ones, thetas) * (
        2.0 * np.pi / (2 * n + 1)
    )


def _golden_section_max(fn: Callable[[float], float], lo: float, hi: float, iters: int) -> float:
    """Golden-section maximization of fn on [lo, hi]."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    return (a + b) / 2.0


def detect_atoms(
    corr: CorrelationSequence,
    candidates: int | np.ndarray = 2048,
    threshold: float | None = None,
    refine_iters: int = 30,
) -> DetectedAtoms:
    """Detect point masses of the measure via the Cesaro harmonic average.

    Candidates above the threshold are reduced to local maxima of |w| over
    the (periodic) candidate grid, then refined by golden-section search
    within one grid cell. Atoms are returned sorted by |weight| descending,
    ties broken by ascending angle.
    """
    if isinstance(candidates, (int, np.integer)):
        grid = uniform_grid(int(candidates))
    else:
        grid = np.sort(np.asarray(candidates, dtype=float))
    g_size = len(grid)
    if threshold is None:
        threshold = default_atom_threshold(corr, g_size)
    if not np.any(np.abs(corr.coefficients) > 0.0):
        # Degenerate zero observable: empty list, no error.
        return DetectedAtoms([], corr.order, g_size, float(threshold))
    if threshold <= 0:
        raise ValueError("threshold must be positive")

    wvals = _cesaro_weight(corr, grid)
    mags = np.abs(wvals)
    up = np.roll(mags, -1)
    down = np.roll(mags, 1)
    is_peak = (mags > down) & (mags >= up) & (mags >= threshold)
    cell = 2.0 * np.pi / g_size if g_size > 1 else 2.0 * np.pi

    refined: list[Atom] = []
    for j in np.flatnonzero(is_peak):
        center = grid[j]
        score = lambda t: float(np.abs(_cesaro_weight(corr, np.array([t]))[0]))
        theta = _golden_section_max(score, center - cell, center + cell, refine_iters)
        theta = float((theta + np.pi) % (2.0 * np.pi) - np.pi)
        weight = complex(_cesaro_weight(corr, np.array([theta]))[0])
        if abs(weight) >= threshold:
            refined.append(Atom(theta, weight))

    # Suppress shadows of stronger atoms: candidates inside the detection
    # kernel's main-lobe resolution 2 pi / N are side lobes, not atoms (the
    # first Dirichlet side lobe carries ~0.22 of the atom mass and sits
    # ~3 pi / (2N+1) away, which exceeds the grid cell whenever the grid
    # resolves the polynomial). Two true atoms closer than this are
    # unresolvable at order N in any case.
    resolution = max(cell, 2.0 * np.pi / corr.order)
    refined.sort(key=lambda a: -abs(a.weight))
    kept: list[Atom] = []
    for atom in refined:
        if all(_circle_gap(atom.theta, k.theta) > resolution for k in kept):
            kept.append(atom)
    kept.sort(key=lambda a: (-abs(a.weight), a.theta))
    return DetectedAtoms(kept, corr.order, g_size, float(threshold))


def _circle_gap(a: float, b: float) -> float:
    d = abs(a - b) % (2.0 * np.pi)
    return min(d, 2.0 * np.pi - d)


# ---------------------------------------------------------------------------
# Lebesgue decomposition, operational form
# ---------------------------------------------------------------------------


def extract_continuous_part(
    estimate: SpectralMeasureEstimate, atoms: DetectedAtoms
) -> np.ndarray:
    """Subtract each atom's filter-smeared kernel from the grid density.

    An atom (theta*, w) contributes w/(2 pi) * sum_{|n|<=N} phi(n/N)
    e^{i n (theta - theta*)} to the filtered density; the remainder is the
    absolutely continuous component sampled on the grid. Atoms must come
    from the same correlation order as the estimate.
    """
    if atoms.order != estimate.order:
        raise ValueError(
            f"atoms detected at order {atoms.order} cannot be subtracted from "
            f"an order-{estimate.order} estimate"
        )
    filt = make_filter(estimate.filter_kind)
    weights = filt.weights(estimate.order)
    ones = np.ones(estimate.order + 1, dtype=complex)
    residual = estimate.density.astype(complex).copy()
    for atom in atoms:
        # The smearing kernel is real and even in (theta - theta*).
        kernel = hermitian_kernel_sum(ones, weights, estimate.grid - atom.theta)
        residual -= atom.weight * kernel.real / (2.0 * np.pi)
    return residual
