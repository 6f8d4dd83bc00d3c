import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import loads
from predalloc.algorithms import (
    DualController,
    PrimalController,
    SimTrace,
    default_alpha,
    default_gamma,
    feasibility_ok,
    run_controller,
    settle,
)
from predalloc.gradient import ensemble_local_gradients, aggregate_error, shift
from predalloc.model import LoadQoS, ReferenceWindow, desk_fleet
from predalloc.qos import ProjectionError, project
from predalloc.signals import feasible_reference, step_signal, synthetic_brd, scale_to_capacity


def test_default_step_sizes():
    fleet = desk_fleet()
    assert default_alpha(fleet) == pytest.approx(0.99 / 104)
    assert default_gamma(fleet) == pytest.approx(0.5 / sum(1 / q.zeta for q in fleet))


def test_primal_step_by_hand():
    fleet = [LoadQoS(0, 10, zeta=1.0), LoadQoS(0, 10, zeta=2.0)]
    c = PrimalController.create(fleet, 2, alpha=0.1, z0=np.array([[1, 2, 3], [4, 5, 6.0]]), prev0=np.array([1.0, 4.0]))
    ref = ReferenceWindow(5.0, [7.0, 9.0])
    z = c.state.z.copy()
    agg = z.sum(axis=0) - [5, 7, 9]
    g = np.array([[0, 2, 3], [0, 10, 12.0]]) + agg
    expect = np.clip(np.roll(z - 0.1 * g, -1, axis=1), 0, 10)
    expect[:, 0] = np.roll(z - 0.1 * g, -1, axis=1)[:, 0]  # memory slot is unconstrained
    st_, total = c.step(ref)
    assert total == 2 + 5
    np.testing.assert_allclose(st_.z, expect, atol=1e-12)
    np.testing.assert_array_equal(st_.prev_consumed, [2.0, 5.0])
    assert st_.tick == 1 and c.broadcasts == 1 and c.projections == 2


def test_primal_rejects_mismatched_window():
    c = PrimalController.create(desk_fleet(3), 2)
    with pytest.raises(ValueError):
        c.step(ReferenceWindow(0.0, [1.0]))


def test_empty_qos_set_raises_with_load_index():
    fleet = [LoadQoS(0, 1), LoadQoS(0, 1, -1, 1, 5, 6)]
    with pytest.raises(ProjectionError) as err:
        PrimalController.create(fleet, 2)
    assert err.value.load == 1


@given(st.lists(loads(), min_size=1, max_size=4), st.integers(1, 4), st.integers(0, 1000))
def test_primal_iterates_stay_feasible(fleet, n_p, seed):
    rng = np.random.default_rng(seed)
    c = PrimalController.create(fleet, n_p)
    sig = rng.normal(0, 10, 20 + n_p)
    run_controller(c, sig, 20)
    assert feasibility_ok(c)


def test_threaded_projection_matches_serial(monkeypatch):
    fleet = desk_fleet(20)
    sig = scale_to_capacity(synthetic_brd(3, 40), fleet)
    a = run_controller(PrimalController.create(fleet, 3), sig, 30)
    monkeypatch.setenv("PREDALLOC_WORKERS", "3")
    b = run_controller(PrimalController.create(fleet, 3), sig, 30)
    np.testing.assert_array_equal(a.total, b.total)


def test_settle_reaches_fixed_point():
    fleet = desk_fleet(10, box_only=True)
    c = PrimalController.create(fleet, 1)
    k = settle(c, 20.0)
    assert k < 200_000
    before = c.state.z.copy()
    c.step(ReferenceWindow(20.0, [20.0]))
    np.testing.assert_allclose(c.state.z, before, atol=1e-9)


def test_dual_controller_update_and_clip():
    fleet = [LoadQoS(0, 2, zeta=1.0), LoadQoS(0, 2, zeta=2.0)]
    d = DualController.create(fleet, gamma=0.5, lam0=1.0)
    np.testing.assert_allclose(d.powers(), [1.0, 0.5])
    lam, p = d.step(s_prev=3.0, prev_total=1.5)
    assert lam == 1.0 + 0.5 * 1.5
    np.testing.assert_allclose(p, [1.75, 0.875])
    d.lam = 100.0
    np.testing.assert_allclose(d.powers(), [2.0, 2.0])


def test_dual_equilibrium():
    fleet = desk_fleet(100, box_only=True)
    d = DualController.create(fleet)
    d.lam = d.equilibrium(250.0)
    assert d.powers().sum() == pytest.approx(250.0, abs=1e-9)
    with pytest.raises(ValueError):
        d.equilibrium(600.0)


def test_dual_trace_multiplier_increments():
    fleet = desk_fleet(20, box_only=True)
    d = DualController.create(fleet)
    sig = step_signal([(0, 30.0), (10, 200.0)], 40)
    tr = run_controller(d, sig, 40)
    # aux[t] = aux[t-1] + gamma * (s - total) of tick t-1, replayed bit for bit
    replay = tr.aux[:-1] - d.gamma * (tr.total[:-1] - tr.s[:-1])
    np.testing.assert_array_equal(tr.aux[1:], replay)
    ulp = 4 * np.finfo(float).eps * np.abs(tr.aux).max()
    np.testing.assert_allclose(np.diff(tr.aux), d.gamma * (tr.s[:-1] - tr.total[:-1]), rtol=0, atol=ulp)


def test_run_controller_checks_signal_length():
    c = PrimalController.create(desk_fleet(3), 3)
    with pytest.raises(ValueError):
        run_controller(c, np.zeros(5), 5)


def test_zero_ticks():
    tr = run_controller(PrimalController.create(desk_fleet(3), 2), np.zeros(4), 0)
    assert tr.ticks == 0


def test_trace_csv_roundtrip(tmp_path):
    fleet = desk_fleet(5)
    sig = feasible_reference(fleet, 30, seed=1)
    tr = run_controller(PrimalController.create(fleet, 3), sig, 25)
    tr.to_csv(tmp_path / "t.csv")
    back = SimTrace.from_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.s, tr.s)
    np.testing.assert_array_equal(back.total, tr.total)
    np.testing.assert_array_equal(back.err, tr.err)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        SimTrace.from_csv(tmp_path / "bad.csv")


def test_preview_noise_leaves_current_sample():
    fleet = desk_fleet(5)
    sig = feasible_reference(fleet, 30, seed=1)
    a = run_controller(PrimalController.create(fleet, 3), sig, 20, preview_noise=0.0)
    b = run_controller(PrimalController.create(fleet, 3), sig, 20, preview_noise=5.0, seed=4)
    np.testing.assert_array_equal(a.s, b.s)
    assert not np.array_equal(a.total, b.total)


def test_realized_ramp_and_anchor_gap_reported():
    # the memory slot is a surrogate, so only the planned ramps are hard limits
    fleet = desk_fleet(10)
    sig = scale_to_capacity(synthetic_brd(0, 60), fleet)
    c = PrimalController.create(fleet, 3)
    tr = run_controller(c, sig, 55, keep_states=True)
    assert np.all(np.isfinite(tr.ramp_max)) and np.all(np.isfinite(tr.anchor_gap))
    for z in tr.states:
        assert np.abs(np.diff(z, axis=1)).max() <= 0.5 + 1e-8
    assert tr.ramp_max[0] == 0.0
