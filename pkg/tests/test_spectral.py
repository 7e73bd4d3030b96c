"""Spectral estimation: correlations, filtered densities, atoms, decomposition."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from koopmanmfc.benchmarks import make_benchmark, wrap_angle
from koopmanmfc.dynamics import (
    AggregatedState,
    MeanFieldSystem,
    NoiseModel,
    StationaryPolicy,
    simulate_trajectory,
)
from koopmanmfc.observables import Observable, builtin_observable
from koopmanmfc.spectral import (
    CorrelationSequence,
    DetectedAtoms,
    default_atom_threshold,
    detect_atoms,
    estimate_correlations,
    extract_continuous_part,
    hermitian_kernel_sum,
    make_filter,
    reconstruct_measure,
    uniform_grid,
)

ALPHA = 2.0


def rotation_trajectory(steps=4000, seed=0, alpha=ALPHA):
    bench = make_benchmark("circle-rotation", alpha=alpha)
    y0 = bench.initial_state(np.random.default_rng(seed))
    return simulate_trajectory(bench.system, bench.policy, y0, steps, rng=seed)


def rotation_correlations(order, alpha=ALPHA):
    """Exact rotation coefficients a_n = e^{i n alpha} / (2 pi)."""
    n = np.arange(order + 1)
    return CorrelationSequence(np.exp(1j * n * alpha) / (2 * np.pi), "g", "g", 1)


# ---------------------------------------------------------------------------
# filters
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["fejer", "cosine", "sharp"])
def test_filter_sanity(kind):
    filt = make_filter(kind)
    probes = np.linspace(-1.0, 1.0, 1000)
    vals = filt(probes)
    assert filt(0.0) == pytest.approx(1.0)
    assert_allclose(vals, filt(-probes))  # even
    assert np.all(np.abs(vals) <= 1.0 + 1e-15)


def test_fejer_is_triangle_and_sharp_is_one():
    t = np.linspace(-1, 1, 21)
    assert_allclose(make_filter("fejer")(t), 1 - np.abs(t))
    assert_allclose(make_filter("sharp")(t), np.ones_like(t))


def test_unknown_filter():
    with pytest.raises(ValueError, match="filter"):
        make_filter("hamming")


# ---------------------------------------------------------------------------
# estimate_correlations
# ---------------------------------------------------------------------------


def test_identity_map_correlations():
    sys_ = MeanFieldSystem(
        state_dim=1,
        control_dim=0,
        drift=lambda x, mu, u, rho: x,
        diffusion=lambda x, mu, u, rho: np.zeros_like(x),
        state_noise=NoiseModel("zero", 0.0, 1),
    )
    traj = simulate_trajectory(sys_, StationaryPolicy.zero(0), AggregatedState.of(0.7, 0.7), 64, 0)
    g = builtin_observable("harmonic", k=1)  # unit modulus, so <g, g> = 1
    corr = estimate_correlations(traj, g, g, order=16)
    assert_allclose(corr.coefficients, np.full(17, 1 / (2 * np.pi)), rtol=1e-12)


def test_rotation_correlations_closed_form():
    traj = rotation_trajectory(steps=2000)
    g = builtin_observable("harmonic", k=1)
    corr = estimate_correlations(traj, g, g, order=64)
    n = np.arange(65)
    assert_allclose(corr.coefficients, np.exp(1j * n * ALPHA) / (2 * np.pi), atol=1e-12)


def test_iid_chain_correlations_bounded():
    bench = make_benchmark("iid-chain", family="uniform", scale=1.0)
    y0 = bench.initial_state(np.random.default_rng(3))
    traj = simulate_trajectory(bench.system, bench.policy, y0, 20_000, rng=3)
    g = builtin_observable("coordinate", index=0)
    order = 32
    corr = estimate_correlations(traj, g, g, order=order)
    var = bench.system.state_noise.stddev**2
    window = len(traj) - order
    # independence oracle: products x_i x_{i+n} are zero mean with variance var^2
    bound = 3.0 * var / np.sqrt(window) / (2 * np.pi)
    assert np.all(np.abs(corr.coefficients[1:]) <= bound)
    gv = np.exp(0j) * traj.xs[:window, 0]
    assert corr.coefficients[0] == pytest.approx(np.mean(np.abs(gv) ** 2) / (2 * np.pi))
    assert corr.a0.imag == 0.0
    assert corr.a0.real >= 0.0


def test_short_trajectory_names_required_length():
    traj = rotation_trajectory(steps=10)
    g = builtin_observable("harmonic", k=1)
    with pytest.raises(ValueError, match="requires >= 33"):
        estimate_correlations(traj, g, g, order=32)


def test_ensemble_scheme_uses_initial_states():
    trajs = [rotation_trajectory(steps=16, seed=s) for s in range(40)]
    g = builtin_observable("harmonic", k=1)
    corr = estimate_correlations(trajs, g, g, order=8, scheme="ensemble")
    n = np.arange(9)
    # every realization contributes exactly e^{i n alpha} |g|^2
    assert_allclose(corr.coefficients, np.exp(1j * n * ALPHA) / (2 * np.pi), atol=1e-12)
    assert corr.sample_count == 40


# ---------------------------------------------------------------------------
# reconstruct_measure
# ---------------------------------------------------------------------------


def test_zero_coefficients_zero_density():
    corr = CorrelationSequence(np.zeros(9, dtype=complex), "f", "g", 1)
    est = reconstruct_measure(corr, "fejer", 64)
    assert_allclose(est.density, 0.0)
    assert est.mass() == 0.0


def test_flat_spectrum_density():
    coeffs = np.zeros(17, dtype=complex)
    coeffs[0] = 1 / (2 * np.pi)
    est = reconstruct_measure(CorrelationSequence(coeffs, "g", "g", 1), "fejer", 128)
    assert_allclose(est.density.real, 1 / (2 * np.pi), rtol=1e-12)
    assert_allclose(est.density.imag, 0.0, atol=1e-15)


def test_fejer_peak_value_at_rotation_angle():
    order = 50
    corr = rotation_correlations(order)
    est = reconstruct_measure(corr, "fejer", 4 * order)
    # kernel-sum oracle: peak at theta = alpha equals sum (1 - |n|/N) = N over 2 pi
    weights = make_filter("fejer").weights(order)
    peak = hermitian_kernel_sum(corr.coefficients, weights, np.array([ALPHA]))[0]
    assert peak.real == pytest.approx(order / (2 * np.pi), rel=1e-12)
    assert np.max(est.density.real) <= peak.real + 1e-12
    j_near = np.argmin(np.abs(est.grid - ALPHA))
    assert est.density.real[j_near] >= 0.8 * order / (2 * np.pi)


def test_coarse_grid_rejected_with_minimum():
    corr = rotation_correlations(100)
    with pytest.raises(ValueError, match="400"):
        reconstruct_measure(corr, "fejer", 256)


@pytest.mark.parametrize("kind", ["fejer", "cosine", "sharp"])
def test_mass_conservation_random_coefficients(kind):
    rng = np.random.default_rng(17)
    for _ in range(5):
        order = int(rng.integers(4, 80))
        coeffs = rng.normal(size=order + 1) + 1j * rng.normal(size=order + 1)
        coeffs[0] = abs(coeffs[0])
        corr = CorrelationSequence(coeffs, "g", "g", 1)
        est = reconstruct_measure(corr, kind, 4 * order + int(rng.integers(0, 9)))
        assert abs(est.mass() - 2 * np.pi * corr.a0) <= 1e-8 * abs(corr.a0)


def test_fejer_positivity_on_rotation_data():
    traj = rotation_trajectory(steps=3000)
    g = builtin_observable("harmonic", k=1)
    for order in (200, 1000):
        corr = estimate_correlations(traj, g, g, order=order)
        est = reconstruct_measure(corr, "fejer", 4 * order)
        floor = -1e-10 * corr.a0.real * order
        assert np.min(est.density.real) >= floor
        # autocorrelation densities are real up to rounding
        assert np.max(np.abs(est.density.imag)) <= 1e-10 * corr.a0.real


def test_hermitian_swap_transformation():
    rng = np.random.default_rng(5)
    coeffs = rng.normal(size=13) + 1j * rng.normal(size=13)
    corr = CorrelationSequence(coeffs, "f", "g", 1)
    swapped = CorrelationSequence(np.conj(coeffs), "g", "f", 1)
    g_size = 64
    d1 = reconstruct_measure(corr, "fejer", g_size).density
    d2 = reconstruct_measure(swapped, "fejer", g_size).density
    # swapping conjugates coefficients; density conjugates after theta -> -theta
    idx = (-np.arange(g_size)) % g_size
    assert_allclose(d2, np.conj(d1[idx]), rtol=1e-10, atol=1e-12)


# ---------------------------------------------------------------------------
# detect_atoms
# ---------------------------------------------------------------------------


def test_zero_coefficients_no_atoms():
    corr = CorrelationSequence(np.zeros(9, dtype=complex), "g", "g", 1)
    atoms = detect_atoms(corr, candidates=128, threshold=1e-6)
    assert len(atoms) == 0


def test_rotation_single_atom():
    traj = rotation_trajectory(steps=4000)
    g = builtin_observable("harmonic", k=1)
    corr = estimate_correlations(traj, g, g, order=500)
    atoms = detect_atoms(corr, candidates=2048)
    assert len(atoms) == 1
    assert abs(atoms.atoms[0].theta - ALPHA) <= 1e-6
    assert abs(atoms.atoms[0].weight - 1.0) <= 5e-3


def test_cosine_observable_two_atoms():
    traj = rotation_trajectory(steps=9000)
    cos_obs = Observable(
        fn=lambda y: complex(np.cos(y.x[0])),
        label="cos",
        codomain="real",
        vec_fn=lambda xs, mus, us, rhos: np.cos(xs[:, 0]).astype(complex),
    )
    corr = estimate_correlations(traj, cos_obs, cos_obs, order=800)
    atoms = detect_atoms(corr, candidates=4096)
    assert len(atoms) == 2
    thetas = sorted(a.theta for a in atoms)
    assert thetas[0] == pytest.approx(-ALPHA, abs=1e-3)
    assert thetas[1] == pytest.approx(ALPHA, abs=1e-3)
    for atom in atoms:
        assert abs(atom.weight - 0.25) <= 0.01


def test_atom_survives_grid_doubling():
    corr = rotation_correlations(300)
    thr = default_atom_threshold(corr, 1024)
    coarse = detect_atoms(corr, candidates=1024, threshold=thr)
    fine = detect_atoms(corr, candidates=2048, threshold=thr)
    strong = [a for a in coarse if abs(a.weight) > 2 * thr]
    assert strong, "test needs at least one strong atom"
    for atom in strong:
        assert any(abs(b.theta - atom.theta) < 1e-6 for b in fine)


def test_degenerate_zero_observable():
    corr = CorrelationSequence(np.zeros(33, dtype=complex), "z", "z", 1)
    atoms = detect_atoms(corr, candidates=256)
    assert len(atoms) == 0
    est = reconstruct_measure(corr, "fejer", 256)
    assert_allclose(est.density, 0.0)


def test_atoms_sorted_by_weight_then_angle():
    order = 400
    n = np.arange(order + 1)
    # two atoms with distinct masses at -1.0 and +2.0
    coeffs = (0.7 * np.exp(1j * n * 2.0) + 0.3 * np.exp(1j * n * (-1.0))) / (2 * np.pi)
    corr = CorrelationSequence(coeffs, "g", "g", 1)
    atoms = detect_atoms(corr, candidates=2048)
    assert len(atoms) == 2
    assert atoms.atoms[0].theta == pytest.approx(2.0, abs=1e-4)
    assert atoms.atoms[1].theta == pytest.approx(-1.0, abs=1e-4)
    assert abs(atoms.atoms[0].weight) > abs(atoms.atoms[1].weight)


# ---------------------------------------------------------------------------
# extract_continuous_part
# ---------------------------------------------------------------------------


def test_pure_atom_subtraction_cancels():
    order = 1000
    corr = rotation_correlations(order)
    est = reconstruct_measure(corr, "fejer", 4 * order)
    atoms = detect_atoms(corr, candidates=4 * order)
    residual = extract_continuous_part(est, atoms)
    peak = order / (2 * np.pi)
    assert np.max(np.abs(residual)) <= 1e-2 * peak


def test_no_atoms_identity():
    corr = rotation_correlations(60)
    est = reconstruct_measure(corr, "fejer", 256)
    residual = extract_continuous_part(est, DetectedAtoms([], 60, 256, 1.0))
    assert_allclose(residual, est.density)


def test_zero_weight_atom_is_noop():
    from koopmanmfc.spectral import Atom

    corr = rotation_correlations(60)
    est = reconstruct_measure(corr, "fejer", 256)
    atoms = DetectedAtoms([Atom(0.5, 0.0 + 0j)], 60, 256, 1.0)
    residual = extract_continuous_part(est, atoms)
    assert_allclose(residual, est.density, atol=1e-15)


def test_order_mismatch_rejected():
    corr = rotation_correlations(60)
    est = reconstruct_measure(corr, "fejer", 256)
    atoms = DetectedAtoms([], 59, 256, 1.0)
    with pytest.raises(ValueError, match="order"):
        extract_continuous_part(est, atoms)


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------


def test_grid_uniform_increasing():
    grid = uniform_grid(173)
    gaps = np.diff(grid)
    assert np.all(gaps > 0)
    assert_allclose(gaps, 2 * np.pi / 173)


@pytest.mark.parametrize(
    "bench_name,kwargs,obs",
    [
        ("circle-rotation", {"alpha": ALPHA}, ("harmonic", {"k": 1})),
        ("doubling-map", {}, ("harmonic", {"k": 1})),
        ("iid-chain", {"family": "uniform", "scale": 1.0}, ("coordinate", {})),
    ],
)
def test_measure_preserving_moment_surrogate(bench_name, kwargs, obs):
    bench = make_benchmark(bench_name, **kwargs)
    y0 = bench.initial_state(np.random.default_rng(12))
    traj = simulate_trajectory(bench.system, bench.policy, y0, 5000, rng=12)
    g = builtin_observable(obs[0], **obs[1])
    from koopmanmfc.observables import sample_observable

    vals = np.abs(sample_observable(g, traj).values) ** 2
    m0, m1 = vals[:-1].mean(), vals[1:].mean()
    spread = max(vals.std(), 1e-12)
    assert abs(m0 - m1) <= 5 * spread / np.sqrt(len(vals))


def test_wrap_angle_range():
    t = np.linspace(-20, 20, 401)
    w = wrap_angle(t)
    assert np.all(w >= -np.pi) and np.all(w < np.pi)
    assert_allclose(np.exp(1j * w), np.exp(1j * t), atol=1e-12)
