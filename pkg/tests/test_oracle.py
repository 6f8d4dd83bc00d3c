import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import loads
from predalloc.algorithms import PrimalController, run_controller
from predalloc.gradient import assemble_hessian, contraction_factor, input_vector
from predalloc.model import LoadQoS, ReferenceWindow, desk_fleet
from predalloc.oracle import (
    OracleTracker,
    enumerate_qp,
    fixed_point_residual,
    iss_monitor,
    projected_gradient_solve,
    qp_sensitivity_bound,
    shifted_optimal_gap,
    solve_optimal,
    zero_feasible,
)
from predalloc.qos import InfeasiblePolytopeError, build_polytope
from predalloc.signals import feasible_reference, scale_to_capacity, synthetic_brd


def _problem(fleet, n_p, rng, scale=10.0):
    H = assemble_hessian(fleet, n_p)
    polys = [build_polytope(q, n_p) for q in fleet]
    u = rng.normal(0, scale, (len(fleet), n_p + 1))
    return H, polys, u


@given(st.lists(loads(), min_size=1, max_size=2), st.integers(0, 10_000), st.booleans())
def test_newton_matches_enumeration(fleet, seed, warm):
    rng = np.random.default_rng(seed)
    H, polys, u = _problem(fleet, 1 if len(fleet) == 2 else 2, rng)
    sol = solve_optimal(H, u, polys, warm=warm)
    np.testing.assert_allclose(sol.z_star, enumerate_qp(H, u, polys), atol=1e-6)
    assert all(p.contains(z) for p, z in zip(polys, sol.z_star))


@given(st.lists(loads(), min_size=2, max_size=6), st.integers(1, 4), st.integers(0, 10_000))
def test_newton_matches_projected_gradient(fleet, n_p, seed):
    rng = np.random.default_rng(seed)
    H, polys, u = _problem(fleet, n_p, rng)
    a = solve_optimal(H, u, polys)
    b = projected_gradient_solve(H, u, polys, tol=1e-12, max_iter=200_000)
    assert a.eta_star <= b.eta_star + 1e-7 * (1 + abs(b.eta_star))
    np.testing.assert_allclose(a.z_star, b.z_star, atol=1e-5)


@given(st.lists(loads(), min_size=1, max_size=6), st.integers(1, 4), st.integers(0, 10_000), st.floats(1e-3, 1.0))
def test_fixed_point_identity(fleet, n_p, seed, frac):
    rng = np.random.default_rng(seed)
    H, polys, u = _problem(fleet, n_p, rng)
    sol = solve_optimal(H, u, polys)
    # any alpha > 0 works for a true minimiser
    assert fixed_point_residual(sol, frac / H.lambda_max, H, u, polys) <= 1e-8
    assert fixed_point_residual(sol, 0.0, H, u, polys) <= 1e-9


def test_warm_and_cold_agree_on_desk_fleet():
    fleet = desk_fleet()
    rng = np.random.default_rng(0)
    H, polys, u = _problem(fleet, 5, rng, scale=100.0)
    a = solve_optimal(H, u, polys, warm=True)
    b = solve_optimal(H, u, polys, warm=False)
    np.testing.assert_allclose(a.z_star, b.z_star, atol=1e-8)
    assert a.kkt_residual <= 1e-10


def test_infeasible_polytope_raises():
    fleet = [LoadQoS(0, 1, -1, 1, 5, 6)]
    H = assemble_hessian(fleet, 2)
    with pytest.raises(InfeasiblePolytopeError):
        solve_optimal(H, np.zeros((1, 3)), [build_polytope(fleet[0], 2)], warm=False)


@given(st.lists(loads(), min_size=1, max_size=5), st.integers(1, 3), st.integers(0, 10_000))
def test_sensitivity_bound_on_random_pairs(fleet, n_p, seed):
    rng = np.random.default_rng(seed)
    H, polys, u_a = _problem(fleet, n_p, rng)
    u_b = u_a + rng.normal(0, rng.uniform(0.01, 10), u_a.shape)
    z_a = solve_optimal(H, u_a, polys).z_star
    z_b = solve_optimal(H, u_b, polys).z_star
    lhs, rhs, holds = qp_sensitivity_bound(H, u_a, u_b, z_a, z_b)
    assert holds, (lhs, rhs)


@given(st.lists(loads(zero_feasible=True), min_size=1, max_size=5), st.integers(1, 3), st.integers(0, 10_000))
def test_shifted_gap_bound_on_random_pairs(fleet, n_p, seed):
    rng = np.random.default_rng(seed)
    H, polys, u_a = _problem(fleet, n_p, rng)
    assert zero_feasible(polys)
    u_b = u_a + rng.normal(0, 3, u_a.shape)
    z_a = solve_optimal(H, u_a, polys).z_star
    z_b = solve_optimal(H, u_b, polys).z_star
    lhs, rhs, holds = shifted_optimal_gap(H, z_a, z_b, u_a, u_b)
    assert holds, (lhs, rhs)


def test_shifted_gap_not_evaluated_without_zero():
    H = assemble_hessian([LoadQoS(1, 2)], 1)
    assert shifted_optimal_gap(H, np.ones((1, 2)), np.ones((1, 2)), np.ones((1, 2)), np.ones((1, 2)), zero_ok=False)[2] is None
    assert not zero_feasible([build_polytope(LoadQoS(1, 2), 1)])


def test_tracker_report_on_short_run():
    fleet = desk_fleet(12)
    sig = scale_to_capacity(synthetic_brd(2, 50), fleet)
    c = PrimalController.create(fleet, 3)
    tk = OracleTracker(c.polytopes, c.hessian, c.alpha)
    tr = run_controller(c, sig, 40, monitor=tk)
    rep = tk.report()
    assert rep["ticks"] == 40 and rep["pass"]
    assert rep["fixed_point"]["worst_residual"] <= 1e-8
    assert rep["sensitivity"]["violations"] == rep["shifted_gap"]["violations"] == 0
    np.testing.assert_allclose(tr.aux, tk.iss().gaps)
    assert rep["constants"]["M_alpha"] == pytest.approx(contraction_factor(c.hessian, c.alpha))


def test_oracle_chain_uses_own_history():
    fleet = desk_fleet(6)
    c = PrimalController.create(fleet, 2)
    tk = OracleTracker(c.polytopes, c.hessian, c.alpha)
    sig = feasible_reference(fleet, 12, seed=0, n_p_max=2)
    run_controller(c, sig, 8, monitor=tk)
    for t in range(1, 8):
        ref = ReferenceWindow.from_samples(sig.samples, t, 2)
        expect = input_vector(tk.z_star[t - 1][:, 1], ref, c.hessian.zeta_bars)
        np.testing.assert_array_equal(tk.u_star[t], expect)


def test_iss_monitor_flags_violation():
    fleet = desk_fleet(4)
    H = assemble_hessian(fleet, 1)
    alpha = 0.5 / H.lambda_max
    zs = [np.zeros((4, 2))] * 3
    u = [np.zeros((4, 2))] * 3
    far = [np.zeros((4, 2)), np.zeros((4, 2)), np.full((4, 2), 1e3)]
    env = iss_monitor(far, zs, H, alpha, u, u)
    assert env.first_violation == 2 and not env.ok
    with pytest.raises(ValueError):
        iss_monitor(zs, zs, H, 3.0 / H.lambda_max, u, u)
