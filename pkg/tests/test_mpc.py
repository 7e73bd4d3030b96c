"""Lifted dynamics, horizon objective, MPC step, and the closed loop."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from koopmanmfc.benchmarks import LqMeanFieldParams, make_benchmark
from koopmanmfc.dynamics import AggregatedState, CostSpec, NoiseModel
from koopmanmfc.model import (
    EigenPair,
    ExpansionCoefficients,
    KoopmanSpectralModel,
    exact_quadratic_model,
    quadrature_nodes,
)
from koopmanmfc.mpc import (
    ControlConfigError,
    MpcConfig,
    closed_loop_run,
    horizon_cost_parts,
    lift,
    predict_horizon_cost,
    propagate_lifted,
    solve_mpc_step,
)


def toy_model(
    eig_thetas=(0.0,),
    coeffs=None,
    n_q=16,
    u_grid=np.linspace(-1.0, 2.0, 13),
):
    """Hand-made model on scalar (n = m = 1) states: base states vary in u,
    eigenfunction tables are constant one, continuous parts are zero."""
    base = np.stack([np.array([0.0, 0.0, u, u]) for u in u_grid])
    b = len(base)
    eigenpairs = [EigenPair(t, np.ones(b, dtype=complex), 1.0, "F") for t in eig_thetas]
    k = len(eigenpairs)
    coeffs = coeffs or {}
    coefficients = {
        lbl: ExpansionCoefficients(
            np.asarray(coeffs.get(lbl, np.zeros(k)), dtype=complex), 0.0
        )
        for lbl in ("F", "C", "G", "H")
    }
    continuous = {lbl: np.zeros((b, n_q), dtype=complex) for lbl in ("F", "C", "G", "H")}
    return KoopmanSpectralModel(
        eigenpairs=eigenpairs,
        coefficients=coefficients,
        continuous=continuous,
        node_thetas=quadrature_nodes(n_q),
        base_states=base,
        state_dim=1,
        control_dim=1,
        order=8,
    )


def y_of(u=0.0):
    return AggregatedState.of(0.0, 0.0, u, u)


# ---------------------------------------------------------------------------
# lift
# ---------------------------------------------------------------------------


def test_lift_unit_eigenpair():
    model = toy_model(coeffs={"F": [1.0]})
    state = lift(model, y_of(0.0))
    assert_allclose(state.z, [1.0])
    for lbl in ("F", "C", "G", "H"):
        assert_allclose(state.w[lbl], 0.0)


def test_lift_passthrough_on_stored_state():
    model = toy_model()
    y = AggregatedState.unpack(model.base_states[4], 1, 1)
    state = lift(model, y)
    assert abs(state.z[0] - model.eigenpairs[0].table[4]) <= 1e-6


def test_lift_requires_cost_observables():
    model = toy_model()
    del model.coefficients["H"]
    del model.continuous["H"]
    with pytest.raises(ControlConfigError, match="H"):
        lift(model, y_of())


# ---------------------------------------------------------------------------
# propagate_lifted
# ---------------------------------------------------------------------------


def test_unit_eigenvalue_fixed():
    model = toy_model(eig_thetas=(0.0,), coeffs={"F": [1.0]})
    state = lift(model, y_of())
    for t in (0, 1, 5, 50):
        assert_allclose(propagate_lifted(state, t).z, state.z)


def test_quarter_turn_squared_is_minus_one():
    model = toy_model(eig_thetas=(np.pi / 2,))
    state = lift(model, y_of())
    out = propagate_lifted(state, 2)
    assert out.z[0] == pytest.approx(-1.0, abs=1e-12)


def test_semigroup_property():
    model = toy_model(eig_thetas=(0.73, -1.9))
    # two eigenpairs of the toy model share the constant table
    state = lift(model, y_of(0.3))
    state.w["F"] = np.exp(1j * np.linspace(0, 1, len(state.node_thetas)))
    direct = propagate_lifted(state, 7)
    stepped = state
    for _ in range(7):
        stepped = propagate_lifted(stepped, 1)
    assert_allclose(direct.z, stepped.z, atol=1e-12)
    assert_allclose(direct.w["F"], stepped.w["F"], atol=1e-12)


def test_modulus_preserved():
    model = toy_model(eig_thetas=(0.73, 2.2, -0.4))
    state = lift(model, y_of())
    state = propagate_lifted(state, 1)
    for t in range(1, 30):
        nxt = propagate_lifted(state, 1)
        assert np.all(np.abs(np.abs(nxt.z) - np.abs(state.z)) <= 1e-12)
        state = nxt


# ---------------------------------------------------------------------------
# horizon cost
# ---------------------------------------------------------------------------


def test_zero_model_zero_cost():
    model = toy_model()
    assert predict_horizon_cost(model, y_of(), 4) == 0.0


def test_unit_eigenpair_three_step_sum():
    model = toy_model(eig_thetas=(0.0,), coeffs={"F": [0.4], "C": [0.6]})
    assert predict_horizon_cost(model, y_of(), 3) == pytest.approx(3.0, abs=1e-12)


def test_alternating_eigenvalue_cancels():
    model = toy_model(eig_thetas=(np.pi,), coeffs={"F": [1.0]})
    assert predict_horizon_cost(model, y_of(), 2) == pytest.approx(0.0, abs=1e-12)


def test_horizon_additivity():
    params = LqMeanFieldParams(a=1.0, c=0.1, b_u=1.0, q_x=1.0, q_mu=0.3, r_u=0.5,
                               g_x=1.5, g_mu=0.0, horizon=6)
    a_cl = params.closed_loop_matrix(params.collapsed_gain())
    model = exact_quadratic_model(a_cl, params.cost_quadratic_forms(), 1, 1, order=300)
    y = AggregatedState.of(0.8, 0.8, -0.2, -0.2)
    horizon = 6
    closed, residue = horizon_cost_parts(model, y, horizon)
    assert residue <= 1e-9

    from koopmanmfc.mpc import stage_value

    state = lift(model, y)
    total = 0.0
    for t in range(horizon):
        total += stage_value(model, propagate_lifted(state, t), ("F", "C")).real
    total += stage_value(model, propagate_lifted(state, horizon), ("G", "H")).real
    assert closed == pytest.approx(total, rel=1e-9)


# ---------------------------------------------------------------------------
# solve_mpc_step
# ---------------------------------------------------------------------------


def one_step_exact_model(order=2000):
    # x' = x + u, C = u^2, G = x'^2: the one-step calculus case
    params = LqMeanFieldParams(
        a=1.0, c=0.0, b_u=1.0, q_x=0.0, q_mu=0.0, r_u=1.0, g_x=1.0, g_mu=0.0,
        horizon=1, x0=1.0,
    )
    a_cl = params.closed_loop_matrix(0.0)
    return exact_quadratic_model(a_cl, params.cost_quadratic_forms(), 1, 1, order=order)


def test_one_step_analytic_minimizer():
    model = one_step_exact_model()
    bench = make_benchmark("lq-meanfield", a=1.0, c=0.0, b_u=1.0, q_x=0.0, q_mu=0.0,
                           r_u=1.0, g_x=1.0, g_mu=0.0, horizon=1, x0=1.0)
    config = MpcConfig(horizon=1, u_lo=-2.0, u_hi=2.0, coarse_resolution=17)
    res = solve_mpc_step(model, bench.system, np.array([1.0]), np.array([1.0]), config)
    assert abs(res.u_star[0] + 0.5) <= 1e-2
    assert abs(res.predicted_cost - 0.5) <= 1e-2
    assert res.imag_residue <= 1e-9
    assert len(res.lifted_trajectory) == 2


def test_tie_break_returns_lower_corner():
    model = toy_model(coeffs={"F": [1.0]})  # cost independent of u
    bench = make_benchmark("lq-meanfield")
    config = MpcConfig(horizon=3, u_lo=-1.0, u_hi=2.0, coarse_resolution=7)
    res = solve_mpc_step(model, bench.system, np.array([0.0]), np.array([0.0]), config)
    assert res.u_star[0] == -1.0


def test_collapsed_box_returns_point():
    model = one_step_exact_model(order=200)
    bench = make_benchmark("lq-meanfield")
    config = MpcConfig(horizon=1, u_lo=0.7, u_hi=0.7)
    res = solve_mpc_step(model, bench.system, np.array([1.0]), np.array([1.0]), config)
    assert res.u_star[0] == 0.7


def test_feasibility_and_constraints():
    model = one_step_exact_model(order=200)
    bench = make_benchmark("lq-meanfield")
    config = MpcConfig(
        horizon=1, u_lo=-2.0, u_hi=2.0, coarse_resolution=9,
        linear_constraints=[(np.array([-1.0]), -0.25)],  # -u <= -0.25, i.e. u >= 0.25
    )
    res = solve_mpc_step(model, bench.system, np.array([1.0]), np.array([1.0]), config)
    assert res.u_star[0] >= 0.25 - 1e-12
    assert -2.0 <= res.u_star[0] <= 2.0
    # constrained optimum of u^2 + ~(1+u)^2 on u >= 0.25 is the boundary
    assert res.u_star[0] == pytest.approx(0.25, abs=1e-6)


def test_empty_admissible_set():
    model = one_step_exact_model(order=200)
    bench = make_benchmark("lq-meanfield")
    config = MpcConfig(
        horizon=1, u_lo=0.0, u_hi=1.0,
        linear_constraints=[(np.array([1.0]), -5.0)],  # u <= -5 infeasible in box
    )
    with pytest.raises(ControlConfigError, match="empty"):
        solve_mpc_step(model, bench.system, np.array([1.0]), np.array([1.0]), config)


def test_determinism_and_monotone_refinement():
    model = one_step_exact_model(order=400)
    bench = make_benchmark("lq-meanfield")
    config = MpcConfig(horizon=1, u_lo=-2.0, u_hi=2.0, coarse_resolution=5)
    r1 = solve_mpc_step(model, bench.system, np.array([1.0]), np.array([1.0]), config)
    r2 = solve_mpc_step(model, bench.system, np.array([1.0]), np.array([1.0]), config)
    assert np.array_equal(r1.u_star, r2.u_star)
    assert r1.predicted_cost == r2.predicted_cost
    # never worse than the best coarse candidate
    grid = np.linspace(-2, 2, 5)
    coarse_best = min(
        predict_horizon_cost(model, AggregatedState.of(1.0, 1.0, u, u), 1) for u in grid
    )
    assert r1.predicted_cost <= coarse_best + 1e-15


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------


def lq_setup(sigma=0.0, horizon=6):
    bench = make_benchmark(
        "lq-meanfield", a=1.05, c=0.2, b_u=1.0, sigma=sigma, q_x=1.0, q_mu=0.5,
        r_u=1.0, g_x=2.0, g_mu=0.0, horizon=horizon, x0=1.0,
    )
    params = bench.params["spec"]
    gain = bench.params["gain"]
    a_cl = params.closed_loop_matrix(gain)
    model = exact_quadratic_model(a_cl, params.cost_quadratic_forms(), 1, 1, order=1500)
    return bench, params, model


def test_single_step_episode_structure():
    bench, params, model = lq_setup()
    config = MpcConfig(horizon=2, u_lo=-3.0, u_hi=3.0, coarse_resolution=9)
    out = closed_loop_run(
        bench.system, NoiseModel("zero", 0.0, 1), model, config,
        bench.initial_state(0), 1, CostSpec.zero(horizon=1), rng=0,
    )
    assert len(out.trajectory) == 2
    assert len(out.step_results) == 1  # exactly one MPC solve for K = 1
    assert out.realized_cost == 0.0


def test_zero_cost_closed_loop():
    bench, params, model = lq_setup()
    config = MpcConfig(horizon=2, u_lo=-3.0, u_hi=3.0)
    out = closed_loop_run(
        bench.system, NoiseModel("zero", 0.0, 1), model, config,
        bench.initial_state(0), 4, CostSpec.zero(horizon=4), rng=0,
    )
    assert out.realized_cost == 0.0


def test_modes_coincide_noise_free():
    bench, params, model = lq_setup(sigma=0.0)
    y0 = bench.initial_state(0)
    outs = {}
    for mode in ("relift", "paper-literal"):
        config = MpcConfig(horizon=4, u_lo=-3.0, u_hi=3.0, mode=mode)
        outs[mode] = closed_loop_run(
            bench.system, NoiseModel("zero", 0.0, 1), model, config, y0, 6,
            bench.costs, rng=0,
        )
    assert_allclose(
        outs["relift"].trajectory.packed(), outs["paper-literal"].trajectory.packed()
    )
    assert outs["relift"].realized_cost == pytest.approx(
        outs["paper-literal"].realized_cost
    )


def test_deterministic_lq_exact_model_near_oracle():
    from koopmanmfc.oracle import solve_lq_meanfield_oracle

    bench, params, model = lq_setup(sigma=0.0, horizon=8)
    oracle = solve_lq_meanfield_oracle(bench).optimal_cost
    config = MpcConfig(horizon=8, u_lo=-3.0, u_hi=3.0, coarse_resolution=13)
    out = closed_loop_run(
        bench.system, NoiseModel("zero", 0.0, 1), model, config,
        bench.initial_state(0), 8, bench.costs, rng=0,
    )
    assert out.realized_cost <= 1.10 * oracle
    assert out.realized_cost >= oracle - 1e-9  # never beats the optimum


def test_controls_feasible_and_deterministic():
    bench, params, model = lq_setup(sigma=0.05)
    config = MpcConfig(horizon=4, u_lo=-1.5, u_hi=1.5)
    run = lambda: closed_loop_run(
        bench.system, NoiseModel("zero", 0.0, 1), model, config,
        bench.initial_state(3), 6, bench.costs, rng=11,
    )
    out1, out2 = run(), run()
    assert np.array_equal(out1.trajectory.packed(), out2.trajectory.packed())
    for res in out1.step_results:
        assert -1.5 <= res.u_star[0] <= 1.5
