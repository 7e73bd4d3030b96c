"""LQ mean-field oracle: backward induction against enumeration and hand math."""

import numpy as np
import pytest

from koopmanmfc.benchmarks import LqMeanFieldParams, make_benchmark
from koopmanmfc.oracle import (
    UnsupportedProblemError,
    enumerate_control_grid,
    solve_lq_meanfield_oracle,
)


def test_one_step_calculus_case():
    # x1 = x0 + u, C = u^2, G = x1^2, x0 = 1: u* = -1/2, J* = 1/2
    p = LqMeanFieldParams(a=1.0, c=0.0, b_u=1.0, q_x=0.0, q_mu=0.0, r_u=1.0,
                          g_x=1.0, g_mu=0.0, horizon=1, x0=1.0)
    sol = solve_lq_meanfield_oracle(p)
    assert sol.optimal_cost == pytest.approx(0.5, abs=1e-12)
    u0 = sol.control(0, 1.0, 1.0)
    assert u0[0] == pytest.approx(-0.5, abs=1e-12)


def test_zero_cost_weights():
    p = LqMeanFieldParams(a=1.0, c=0.2, b_u=1.0, q_x=0.0, q_mu=0.0, r_u=0.0,
                          g_x=0.0, g_mu=0.0, horizon=3, x0=1.0)
    sol = solve_lq_meanfield_oracle(p)
    assert sol.optimal_cost == pytest.approx(0.0, abs=1e-12)


def test_two_step_matches_enumeration():
    p = LqMeanFieldParams(a=1.0, c=0.0, b_u=1.0, q_x=1.0, q_mu=0.0, r_u=1.0,
                          g_x=1.0, g_mu=0.0, horizon=2, x0=1.0)
    exact = solve_lq_meanfield_oracle(p).optimal_cost
    brute = enumerate_control_grid(p, grid_step=1e-3, box=(-2.0, 2.0))
    assert abs(exact - brute) <= 1e-4


def test_mean_coupled_two_step_matches_enumeration():
    p = LqMeanFieldParams(a=0.9, c=0.3, b_u=0.8, q_x=1.0, q_mu=0.5, r_u=0.7,
                          g_x=1.2, g_mu=0.4, horizon=2, x0=1.0)
    exact = solve_lq_meanfield_oracle(p).optimal_cost
    brute = enumerate_control_grid(p, grid_step=1e-3, box=(-2.0, 2.0))
    assert abs(exact - brute) <= 1e-4


def test_noise_adds_terminal_variance():
    # horizon 1: J*(sigma) = J*(0) + g_x sigma^2 (noise enters the final state only)
    base = dict(a=1.0, c=0.0, b_u=1.0, q_x=0.0, q_mu=0.0, r_u=1.0,
                g_x=1.0, g_mu=0.0, horizon=1, x0=1.0)
    det = solve_lq_meanfield_oracle(LqMeanFieldParams(**base)).optimal_cost
    noisy = solve_lq_meanfield_oracle(LqMeanFieldParams(sigma=0.4, **base)).optimal_cost
    assert noisy == pytest.approx(det + 0.16, abs=1e-12)


def test_oracle_reproducible():
    p = LqMeanFieldParams(horizon=8)
    a = solve_lq_meanfield_oracle(p)
    b = solve_lq_meanfield_oracle(p)
    assert a.optimal_cost == b.optimal_cost
    for ka, kb in zip(a.gains, b.gains):
        assert np.array_equal(ka, kb)


def test_non_lq_benchmark_rejected():
    bench = make_benchmark("circle-rotation", alpha=1.0)
    with pytest.raises(UnsupportedProblemError, match="kind"):
        solve_lq_meanfield_oracle(bench)


def test_enumeration_guards():
    with pytest.raises(UnsupportedProblemError, match="sigma"):
        enumerate_control_grid(LqMeanFieldParams(sigma=0.1, horizon=2))
    with pytest.raises(UnsupportedProblemError, match="horizon"):
        enumerate_control_grid(LqMeanFieldParams(horizon=5))


def test_benchmark_oracle_entry_point():
    bench = make_benchmark("lq-meanfield", a=1.05, c=0.2, horizon=6)
    sol = solve_lq_meanfield_oracle(bench)
    assert np.isfinite(sol.optimal_cost)
    assert len(sol.gains) == 6
    # optimal cost never exceeds the do-nothing rollout on this benchmark
    p = bench.params["spec"]
    x = mu = p.x0
    passive = 0.0
    for _ in range(p.horizon):
        passive += p.q_x * x**2 + p.q_mu * mu**2
        nxt = p.a * x + p.c * mu
        x = mu = nxt
    passive += p.g_x * x**2 + p.g_mu * mu**2
    assert sol.optimal_cost <= passive + 1e-12