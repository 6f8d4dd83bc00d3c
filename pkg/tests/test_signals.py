import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from predalloc.algorithms import PrimalController, run_controller
from predalloc.harness import tracking_error_pct
from predalloc.model import desk_fleet
from predalloc.qos import build_polytope
from predalloc.signals import (
    ReferenceSignal,
    band_energy_fraction,
    feasible_reference,
    ingest_csv,
    scale_to_capacity,
    signal_from_spec,
    step_signal,
    synthetic_brd,
)


def test_step_signal():
    sig = step_signal([(0, 1.0), (3, 5.0)], 6)
    np.testing.assert_array_equal(sig.samples, [1, 1, 1, 5, 5, 5])
    np.testing.assert_array_equal(step_signal([(2, 4.0)], 4).samples, [0, 0, 4, 4])
    with pytest.raises(ValueError):
        step_signal([(3, 1.0), (3, 2.0)], 6)
    with pytest.raises(ValueError):
        step_signal([(7, 1.0)], 6)


def test_signal_is_read_only():
    sig = ReferenceSignal([1.0, 2.0])
    with pytest.raises(ValueError):
        sig.samples[0] = 3.0
    with pytest.raises(ValueError):
        ReferenceSignal([1.0, np.inf])
    with pytest.raises(ValueError):
        sig.require(2, 1)


@given(st.integers(0, 2**31), st.integers(64, 600), st.floats(0.1, 100))
def test_synthetic_is_zero_mean_band_limited(seed, total, amp):
    sig = synthetic_brd(seed, total, amplitude=amp)
    x = sig.samples
    assert abs(x.mean()) <= 1e-9 * amp
    assert np.abs(x).max() == pytest.approx(amp)
    assert band_energy_fraction(x, (6.0, 288.0)) >= 1 - 1e-9


def test_synthetic_seeded_and_degenerate():
    np.testing.assert_array_equal(synthetic_brd(4, 100).samples, synthetic_brd(4, 100).samples)
    assert not np.array_equal(synthetic_brd(4, 100).samples, synthetic_brd(5, 100).samples)
    np.testing.assert_array_equal(synthetic_brd(1, 10, amplitude=0).samples, np.zeros(10))
    with pytest.raises(ValueError):
        synthetic_brd(1, 100, band=(1.0, 5.0))


def test_scale_to_capacity_range():
    fleet = desk_fleet()
    sig = scale_to_capacity(synthetic_brd(0, 288), fleet, margin=0.9)
    assert sig.samples.min() == pytest.approx(25.0)
    assert sig.samples.max() == pytest.approx(475.0)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        flat = scale_to_capacity(ReferenceSignal(np.ones(5)), fleet)
    np.testing.assert_allclose(flat.samples, np.full(5, 250.0))
    assert rec and issubclass(rec[0].category, RuntimeWarning)
    with pytest.raises(ValueError):
        scale_to_capacity(sig, fleet, margin=0.0)


def test_ingest_csv_minutes_and_mw(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("time,value_MW\n0,1\n10,2\n20,4\n")
    sig = ingest_csv(p, columns={"value": "value_MW"})
    np.testing.assert_allclose(sig.samples, [1000, 1500, 2000, 3000, 4000])
    sig_kw = ingest_csv(p, columns={"value": "value_MW"}, unit="kW")
    assert sig_kw.samples[0] == 1.0


def test_ingest_csv_iso_timestamps(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("time,value\n2020-01-01T00:00:00,0\n2020-01-01T00:15:00,3\n")
    np.testing.assert_allclose(ingest_csv(p).samples, [0, 1, 2, 3])


@pytest.mark.parametrize(
    "body, msg",
    [
        ("", "empty"),
        ("time,val\n0,1\n", "lacks column"),
        ("time,value\n0,abc\n", "malformed row 2"),
        ("time,value\n0,1\n0,2\n", "not increasing"),
        ("time,value\n", "no data"),
    ],
)
def test_ingest_csv_errors(tmp_path, body, msg):
    p = tmp_path / "r.csv"
    p.write_text(body)
    with pytest.raises(ValueError, match=msg):
        ingest_csv(p)


def test_feasible_reference_is_exactly_trackable():
    fleet = desk_fleet(20)
    sig, walks = feasible_reference(fleet, 80, seed=3, return_loads=True)
    np.testing.assert_allclose(walks.sum(axis=0), sig.samples)
    for n_p in (1, 3, 5):
        for i, q in enumerate(fleet):
            p = build_polytope(q, n_p)
            for t in range(1, 80 - n_p):
                assert p.contains(walks[i, t - 1 : t + n_p])


def test_signal_from_spec_kinds(tmp_path):
    fleet = desk_fleet(10)
    assert len(signal_from_spec({"kind": "synthetic", "seed": 1}, fleet, 50)) == 50
    step = signal_from_spec({"kind": "step", "levels": [[0, 3.0]]}, fleet, 5)
    np.testing.assert_array_equal(step.samples, np.full(5, 3.0))
    (tmp_path / "r.csv").write_text("time,value\n0,0\n100,1\n")
    assert len(signal_from_spec({"kind": "csv", "path": str(tmp_path / "r.csv")}, fleet, 10)) == 10
    with pytest.raises(ValueError, match="samples"):
        signal_from_spec({"kind": "csv", "path": str(tmp_path / "r.csv")}, fleet, 100)
    with pytest.raises(ValueError, match="unknown signal options"):
        signal_from_spec({"kind": "synthetic", "sed": 1}, fleet, 10)
    with pytest.raises(ValueError, match="unknown signal kind"):
        signal_from_spec({"kind": "wav"}, fleet, 10)


def test_tracking_error_examples():
    assert tracking_error_pct(np.array([1.0, -1, 2]), np.full(3, 10.0)) == pytest.approx(40 / 3)
    assert tracking_error_pct(np.zeros(3), np.ones(3)) == 0.0
    s = np.array([1.0, 2.0])
    assert tracking_error_pct(-s, s) == pytest.approx(100.0)
    with pytest.raises(ValueError):
        tracking_error_pct(np.ones(2), np.zeros(2))
    with pytest.raises(ValueError):
        tracking_error_pct(np.zeros(0), np.zeros(0))


def test_desk_run_error_is_finite():
    fleet = desk_fleet(30)
    sig = scale_to_capacity(synthetic_brd(0, 60), fleet)
    tr = run_controller(PrimalController.create(fleet, 3), sig, 55)
    assert np.isfinite(tracking_error_pct(tr))
