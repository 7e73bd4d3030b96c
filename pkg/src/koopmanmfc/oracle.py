"""Finite-horizon LQ mean-field oracle.

Exact backward induction on the joint (x, mu) quadratic value function,
with a control-grid enumeration cross-check for noise-free scalar cases.
The oracle is the ground truth the controller's realized cost is compared
against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .benchmarks import Benchmark, LqMeanFieldParams

__all__ = [
    "UnsupportedProblemError",
    "OracleSolution",
    "solve_lq_meanfield_oracle",
    "enumerate_control_grid",
]


class UnsupportedProblemError(ValueError):
    """The oracle only solves quadratic-cost linear mean-field problems."""


@dataclass(eq=False)
class OracleSolution:
    """Optimal cost with the time-varying feedback gains that achieve it."""

    optimal_cost: float
    gains: list[np.ndarray] = field(default_factory=list)
    method: str = "backward-induction"

    def control(self, t: int, x, mu) -> np.ndarray:
        s = np.concatenate([np.atleast_1d(x), np.atleast_1d(mu)])
        return -self.gains[t] @ s


def _params_of(problem) -> LqMeanFieldParams:
    if isinstance(problem, LqMeanFieldParams):
        return problem
    if isinstance(problem, Benchmark):
        if problem.kind != "lq-meanfield":
            raise UnsupportedProblemError(
                f"benchmark kind {problem.kind!r} has no quadratic oracle"
            )
        return problem.params["spec"]
    raise UnsupportedProblemError(f"cannot solve oracle for {type(problem).__name__}")


def solve_lq_meanfield_oracle(problem: Benchmark | LqMeanFieldParams) -> OracleSolution:
    """Exact optimal cost by Riccati-type backward induction.

    The value function V_t(s) = s' P_t s + kappa_t on the joint state
    s = (x, mu) stays quadratic under the linear dynamics; kappa accumulates
    the noise contribution trace(P_{t+1} W) per step. The terminal control
    cost H is minimized pointwise (u_N enters no dynamics).
    """
    p = _params_of(problem)
    mats = p.oracle_matrices()
    A, B = mats["A"], mats["B"]
    Q, R, Qf = mats["Q"], mats["R"], mats["Qf"]
    W, s0 = mats["noise_cov"], mats["s0"]

    P = Qf.copy()
    kappa = 0.0
    gains_rev: list[np.ndarray] = []
    for _ in range(p.horizon):
        BtP = B.T @ P
        curvature = R + BtP @ B
        try:
            gain = np.linalg.solve(curvature, BtP @ A)
        except np.linalg.LinAlgError:
            # Degenerate (cost-free) control direction: minimum-norm gain.
            gain = np.linalg.pinv(curvature) @ (BtP @ A)
        kappa += float(np.trace(P @ W))  # tr(P_{t+1} W), P not yet updated
        P = Q + A.T @ P @ A - A.T @ P @ B @ gain
        P = (P + P.T) / 2.0  # keep symmetric against rounding drift
        gains_rev.append(gain)

    cost = float(s0 @ P @ s0) + kappa
    return OracleSolution(optimal_cost=cost, gains=gains_rev[::-1])


def enumerate_control_grid(
    problem: Benchmark | LqMeanFieldParams,
    grid_step: float = 1e-3,
    box: tuple[float, float] | None = None,
) -> float:
    """Brute-force optimal cost over discretized open-loop controls.

    Noise-free problems only (open loop is then optimal). Supports short
    horizons; the search is chunked over the first control so memory stays
    linear in the grid size.
    """
    p = _params_of(problem)
    if p.sigma != 0.0:
        raise UnsupportedProblemError("control-grid enumeration requires sigma = 0")
    if p.horizon > 3:
        raise UnsupportedProblemError("control-grid enumeration supports horizon <= 3")
    lo, hi = box if box is not None else (p.u_lo, p.u_hi)
    grid = np.arange(lo, hi + grid_step / 2, grid_step)

    def stage(x, mu, u):
        return p.q_x * x**2 + p.q_mu * mu**2 + p.r_u * u**2

    def terminal(x, mu):
        return p.g_x * x**2 + p.g_mu * mu**2

    def best_from(x, mu, steps_left):
        # x, mu are arrays of partial-rollout states; returns best cost-to-go.
        if steps_left == 0:
            return terminal(x, mu)  # H = 0 at its pointwise minimum
        best = None
        for u in grid:
            b = p.a * x + p.c * mu + p.b_u * u
            cost = stage(x, mu, u) + best_from(b, b, steps_left - 1)
            best = cost if best is None else np.minimum(best, cost)
        return best

    x0 = np.array([p.x0])
    if p.horizon <= 2:
        # Vectorize the innermost level for speed at fine grids.
        total = None
        for u0 in grid:
            b0 = p.a * x0[0] + p.c * x0[0] + p.b_u * u0
            c0 = stage(x0[0], x0[0], u0)
            if p.horizon == 1:
                cand = c0 + terminal(b0, b0)
            else:
                b1 = p.a * b0 + p.c * b0 + p.b_u * grid
                cand = float(np.min(c0 + stage(b0, b0, grid) + terminal(b1, b1)))
            total = cand if total is None else min(total, cand)
        return float(total)
    return float(best_from(x0, x0, p.horizon)[0])
