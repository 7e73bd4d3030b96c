"""Mean-field dynamics: step semantics, ensembles, costs, reproducibility."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from koopmanmfc.dynamics import (
    AggregatedState,
    CostSpec,
    MapEvaluationError,
    MeanFieldSystem,
    NoiseModel,
    StationaryPolicy,
    evaluate_cost,
    lipschitz_ratio,
    simulate_ensemble,
    simulate_realizations,
    simulate_trajectory,
    step_controlled,
    step_uncontrolled,
)


def scalar_system(a=0.5, c=0.3, b_u=0.0, sigma=0.0, family="gaussian", control_dim=0):
    return MeanFieldSystem(
        state_dim=1,
        control_dim=control_dim,
        drift=lambda x, mu, u, rho: a * x + c * mu + (b_u * u if control_dim else 0.0),
        diffusion=lambda x, mu, u, rho: np.asarray(sigma, dtype=float),
        state_noise=NoiseModel(family if sigma else "zero", float(sigma), 1),
    )


def y_scalar(x, mu, u=(), rho=()):
    return AggregatedState.of(x, mu, u, rho)


# ---------------------------------------------------------------------------
# step_uncontrolled
# ---------------------------------------------------------------------------


def test_identity_drift_fixed_point():
    sys_ = scalar_system(a=1.0, c=0.0)
    x1, mu1 = step_uncontrolled(sys_, (np.array([1.0]), np.array([1.0])), 0)
    assert_allclose(x1, [1.0])
    assert_allclose(mu1, [1.0])


def test_zero_map():
    sys_ = scalar_system(a=0.0, c=0.0)
    x1, mu1 = step_uncontrolled(sys_, (np.array([3.0]), np.array([-2.0])), 0)
    assert_allclose(x1, [0.0])
    assert_allclose(mu1, [0.0])


def test_linear_drift_arithmetic():
    # oracle: 0.5 * 1 + 0.3 * 1 = 0.8 for both components
    sys_ = scalar_system(a=0.5, c=0.3)
    x1, mu1 = step_uncontrolled(sys_, (np.array([1.0]), np.array([1.0])), 0)
    assert_allclose(x1, [0.8])
    assert_allclose(mu1, [0.8])


def test_nonfinite_drift_names_map():
    bad = MeanFieldSystem(
        state_dim=1,
        control_dim=0,
        drift=lambda x, mu, u, rho: x / 0.0,
        diffusion=lambda x, mu, u, rho: np.zeros((1, 1)),
        state_noise=NoiseModel("zero", 0.0, 1),
    )
    with np.errstate(divide="ignore"), pytest.raises(MapEvaluationError, match="drift"):
        step_uncontrolled(bad, (np.array([1.0]), np.array([1.0])), 0)


# ---------------------------------------------------------------------------
# step_controlled
# ---------------------------------------------------------------------------


def test_all_zero_step():
    sys_ = scalar_system(a=0.0, c=0.0, control_dim=1)
    pol = StationaryPolicy.zero(1)
    y1 = step_controlled(sys_, pol, y_scalar(1.0, 1.0, 1.0, 1.0), 0)
    for comp in (y1.x, y1.mu, y1.u, y1.rho):
        assert_allclose(comp, [0.0])


def test_four_line_update_order():
    # x' = x + u = 2, mu' = 2, u' = pi(x') = -2, rho' = -2
    sys_ = MeanFieldSystem(
        state_dim=1,
        control_dim=1,
        drift=lambda x, mu, u, rho: x + u,
        diffusion=lambda x, mu, u, rho: np.zeros(1),
        state_noise=NoiseModel("zero", 0.0, 1),
    )
    pol = StationaryPolicy(mean_map=lambda x: -x, randomization=NoiseModel("zero", 0.0, 1))
    y1 = step_controlled(sys_, pol, y_scalar(1.0, 1.0, 1.0, 1.0), 0)
    assert_allclose(y1.x, [2.0])
    assert_allclose(y1.mu, [2.0])
    assert_allclose(y1.u, [-2.0])
    assert_allclose(y1.rho, [-2.0])


def test_step_deterministic_under_seed():
    sys_ = scalar_system(a=0.9, sigma=0.1, control_dim=1)
    pol = StationaryPolicy.zero(1)
    y0 = y_scalar(1.0, 1.0, 0.0, 0.0)
    y1 = step_controlled(sys_, pol, y0, 1234)
    y2 = step_controlled(sys_, pol, y0, 1234)
    assert y1.x[0] == y2.x[0]
    assert y1.u[0] == y2.u[0]


# ---------------------------------------------------------------------------
# simulate_trajectory
# ---------------------------------------------------------------------------


def test_single_step_trajectory_matches_step():
    sys_ = scalar_system(a=0.9, sigma=0.2, control_dim=1)
    pol = StationaryPolicy.zero(1)
    y0 = y_scalar(1.0, 1.0, 0.0, 0.0)
    traj = simulate_trajectory(sys_, pol, y0, steps=1, rng=7)
    assert len(traj) == 2
    y1 = step_controlled(sys_, pol, y0, 7)
    assert_allclose(traj.xs[1], y1.x)
    assert_allclose(traj.us[1], y1.u)
    assert traj.seed == 7


def test_deterministic_iteration_oracle():
    sys_ = MeanFieldSystem(
        state_dim=1,
        control_dim=1,
        drift=lambda x, mu, u, rho: 0.5 * x + 0.2 * mu + u,
        diffusion=lambda x, mu, u, rho: np.zeros(1),
        state_noise=NoiseModel("zero", 0.0, 1),
    )
    pol = StationaryPolicy(mean_map=lambda x: -0.1 * x, randomization=NoiseModel("zero", 0.0, 1))
    y0 = y_scalar(1.0, 0.5, 0.2, 0.2)
    traj = simulate_trajectory(sys_, pol, y0, steps=5, rng=0)

    # explicit 5-fold composition oracle
    x, mu, u, rho = 1.0, 0.5, 0.2, 0.2
    for k in range(5):
        b = 0.5 * x + 0.2 * mu + u
        x, mu = b, b
        u = -0.1 * x
        rho = -0.1 * x
        assert_allclose(traj.xs[k + 1], [x])
        assert_allclose(traj.mus[k + 1], [mu])
        assert_allclose(traj.us[k + 1], [u])
        assert_allclose(traj.rhos[k + 1], [rho])


def test_same_seed_identical_trajectories():
    sys_ = scalar_system(a=0.9, sigma=0.3, control_dim=1)
    pol = StationaryPolicy(
        mean_map=lambda x: -0.2 * x, randomization=NoiseModel("uniform", 0.1, 1)
    )
    y0 = y_scalar(1.0, 1.0, 0.0, 0.0)
    t1 = simulate_trajectory(sys_, pol, y0, steps=50, rng=42)
    t2 = simulate_trajectory(sys_, pol, y0, steps=50, rng=42)
    assert np.array_equal(t1.packed(), t2.packed())


def test_zero_diffusion_seed_independent():
    sys_ = scalar_system(a=0.7, c=0.1, sigma=0.0, control_dim=1)
    pol = StationaryPolicy(mean_map=lambda x: -0.3 * x, randomization=NoiseModel("zero", 0.0, 1))
    y0 = y_scalar(0.5, 0.5, 0.0, 0.0)
    t1 = simulate_trajectory(sys_, pol, y0, steps=20, rng=1)
    t2 = simulate_trajectory(sys_, pol, y0, steps=20, rng=999)
    assert np.array_equal(t1.packed(), t2.packed())


def test_step_error_carries_index():
    sys_ = MeanFieldSystem(
        state_dim=1,
        control_dim=0,
        drift=lambda x, mu, u, rho: x * 1e8,  # overflows to inf on the second step
        diffusion=lambda x, mu, u, rho: np.zeros(1),
        state_noise=NoiseModel("zero", 0.0, 1),
    )
    pol = StationaryPolicy.zero(0)
    with np.errstate(over="ignore"), pytest.raises(MapEvaluationError, match=r"step 1"):
        simulate_trajectory(sys_, pol, y_scalar(1e300, 1e300), steps=10, rng=0)


def test_simulate_realizations_matches_trajectory_when_deterministic():
    sys_ = scalar_system(a=0.5, c=0.25, sigma=0.0)
    pol = StationaryPolicy.zero(0)
    y0 = y_scalar(1.0, 1.0)
    ref = simulate_trajectory(sys_, pol, y0, steps=8, rng=0)
    batch = simulate_realizations(sys_, pol, y0, steps=8, count=3, rng=0)
    assert len(batch) == 3
    for traj in batch:
        assert_allclose(traj.packed(), ref.packed())


# ---------------------------------------------------------------------------
# simulate_ensemble
# ---------------------------------------------------------------------------


def test_single_particle_mean_is_state():
    sys_ = scalar_system(a=0.8, c=0.1, sigma=0.2, control_dim=1)
    pol = StationaryPolicy.zero(1)
    res = simulate_ensemble(sys_, pol, lambda rng, m: rng.normal(0, 1, (m, 1)), 1, 30, rng=3)
    assert_allclose(res.mus, res.xs[:, 0])


def test_linear_mean_recursion_exact_noise_free():
    a, c = 0.5, 0.25
    sys_ = scalar_system(a=a, c=c, sigma=0.0)
    pol = StationaryPolicy.zero(0)
    res = simulate_ensemble(
        sys_, pol, lambda rng, m: np.full((m, 1), 1.0), particles=16, steps=2, rng=0
    )
    # recursion oracle: mu_{k+1} = (a + c) mu_k, mu_0 = 1 -> mu_2 = 0.75^2
    assert_allclose(res.mus[1], [(a + c)])
    assert_allclose(res.mus[2], [0.5625])


@pytest.mark.parametrize("particles", [1000, 10000])
def test_linear_mean_recursion_under_noise(particles):
    a, c, scale = 0.6, 0.2, 0.3
    sys_ = scalar_system(a=a, c=c, sigma=scale, family="uniform")
    pol = StationaryPolicy.zero(0)
    res = simulate_ensemble(
        sys_, pol, lambda rng, m: rng.normal(0, 1, (m, 1)), particles, steps=10, rng=11
    )
    bound = 6.0 * scale / np.sqrt(particles)
    for k in range(10):
        assert abs(res.mus[k + 1, 0] - (a + c) * res.mus[k, 0]) <= bound


def test_zero_particles_rejected():
    sys_ = scalar_system()
    with pytest.raises(ValueError):
        simulate_ensemble(sys_, StationaryPolicy.zero(0), lambda rng, m: np.zeros((m, 1)), 0, 5, 0)


def test_modes_coincide_when_deterministic():
    sys_ = MeanFieldSystem(
        state_dim=1,
        control_dim=1,
        drift=lambda x, mu, u, rho: 0.4 * x + 0.3 * mu + 0.5 * u,
        diffusion=lambda x, mu, u, rho: np.zeros(1),
        state_noise=NoiseModel("zero", 0.0, 1),
    )
    pol = StationaryPolicy(mean_map=lambda x: -0.2 * x, randomization=NoiseModel("zero", 0.0, 1))
    x0 = 0.7
    y0 = y_scalar(x0, x0, -0.2 * x0, -0.2 * x0)
    lit = simulate_trajectory(sys_, pol, y0, steps=12, rng=0)
    ens = simulate_ensemble(sys_, pol, lambda rng, m: np.full((m, 1), x0), 5, 12, rng=0)
    assert_allclose(ens.mus, lit.mus)
    assert_allclose(ens.rhos, lit.rhos)
    assert_allclose(ens.xs[:, 0], lit.xs)


# ---------------------------------------------------------------------------
# evaluate_cost
# ---------------------------------------------------------------------------


def constant_trajectory(x, u, steps):
    sys_ = MeanFieldSystem(
        state_dim=1,
        control_dim=1,
        drift=lambda xx, mm, uu, rr: xx,
        diffusion=lambda xx, mm, uu, rr: np.zeros(1),
        state_noise=NoiseModel("zero", 0.0, 1),
    )
    pol = StationaryPolicy(mean_map=lambda xx: np.full(1, u), randomization=NoiseModel("zero", 0.0, 1))
    return simulate_trajectory(sys_, pol, y_scalar(x, x, u, u), steps, rng=0)


def test_zero_costs():
    traj = constant_trajectory(1.0, 0.0, 4)
    assert evaluate_cost(traj, CostSpec.zero(horizon=3)) == 0.0


def test_hand_summed_state_cost():
    # x_k = 1 for all k, F = x^2, G = x^2, N = 2 -> 1 + 1 + 1 = 3
    traj = constant_trajectory(1.0, 0.0, 3)
    costs = CostSpec(
        stage_state=lambda x, mu: float(x[0] ** 2),
        stage_control=lambda u, rho: 0.0,
        terminal_state=lambda x, mu: float(x[0] ** 2),
        terminal_control=lambda u, rho: 0.0,
        horizon=2,
    )
    assert evaluate_cost(traj, costs) == pytest.approx(3.0)


def test_control_cost_single_particle():
    # N = 1, C = u^2, u_0 = 2 -> 4
    traj = constant_trajectory(0.0, 2.0, 2)
    costs = CostSpec(
        stage_state=lambda x, mu: 0.0,
        stage_control=lambda u, rho: float(u[0] ** 2),
        terminal_state=lambda x, mu: 0.0,
        terminal_control=lambda u, rho: 0.0,
        horizon=1,
    )
    assert evaluate_cost(traj, costs) == pytest.approx(4.0)


def test_short_trajectory_rejected():
    traj = constant_trajectory(1.0, 0.0, 2)
    with pytest.raises(ValueError, match="horizon"):
        evaluate_cost(traj, CostSpec.zero(horizon=5))


# ---------------------------------------------------------------------------
# noise and policy invariants
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("family,scale", [("gaussian", 0.7), ("uniform", 1.3)])
def test_noise_centering(family, scale):
    model = NoiseModel(family, scale, dim=3)
    draws = model.sample(np.random.default_rng(5), size=100_000)
    bound = 3.0 * scale / np.sqrt(100_000) * np.sqrt(3)
    assert np.linalg.norm(draws.mean(axis=0)) <= bound


def test_policy_randomization_centered():
    model = NoiseModel("uniform", 0.5, dim=1)
    draws = model.sample(np.random.default_rng(9), size=10_000)
    assert abs(draws.mean()) <= 3.0 * model.stddev / np.sqrt(10_000)


def test_noise_rejects_unknown_family():
    with pytest.raises(ValueError, match="family"):
        NoiseModel("cauchy", 1.0, 1)


def test_lipschitz_probe_linear_system():
    sys_ = scalar_system(a=0.5, c=0.3, sigma=0.1, control_dim=0)
    drift_ratio, diff_ratio = lipschitz_ratio(sys_, pairs=1000, rng=0)
    # |b(p) - b(q)| <= sqrt(0.5^2 + 0.3^2) |p - q| for the linear drift
    assert drift_ratio <= np.sqrt(0.5**2 + 0.3**2) + 1e-12
    assert diff_ratio == 0.0
