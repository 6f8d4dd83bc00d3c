import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import loads
from predalloc.model import LoadQoS
from predalloc.qos import (
    InfeasiblePolytopeError,
    build_polytope,
    check_nonempty,
    dykstra_project,
    enumerate_project,
    project,
    solve_qp_diag,
)

vecs = lambda n: st.lists(st.floats(-20, 20), min_size=n, max_size=n).map(np.array)  # noqa: E731


def test_polytope_rows_and_memory_slot_free():
    q = LoadQoS(0, 2, -1, 1, 0, 3)
    p = build_polytope(q, 2)
    assert p.A.shape == (2 + 2 + 2 + 2 + 2, 3)
    # the memory slot only enters through the first ramp row
    assert np.count_nonzero(p.A[:, 0]) == 2
    assert p.contains([100.0, 1.0, 1.0]) is False  # ramp from the memory slot
    assert p.contains([1.5, 1.0, 1.0])
    assert p.contains([1.0, 2.0, 2.0]) is False  # energy 4 > 3


def test_box_projection_is_clip():
    p = build_polytope(LoadQoS(0, 1), 3)
    x = np.array([5.0, -1.0, 0.5, 3.0])
    np.testing.assert_allclose(project(p, x).point, [5.0, 0.0, 0.5, 1.0], atol=1e-12)


def test_projection_shape_error():
    with pytest.raises(ValueError):
        project(build_polytope(LoadQoS(0, 1), 2), np.zeros(2))


def test_empty_polytope_detected():
    q = LoadQoS(0, 1, -1, 1, 5, 10)  # energy needs 5 but two slots give at most 2
    p = build_polytope(q, 2)
    ok, witness = check_nonempty(p)
    assert not ok and witness is None
    with pytest.raises(InfeasiblePolytopeError):
        project(p, np.zeros(3))


def test_nonempty_witness_is_feasible():
    q = LoadQoS(0, 5, 0.5, 1, 3, 100)  # ramp must rise every step
    p = build_polytope(q, 3)
    ok, w = check_nonempty(p)
    assert ok and p.contains(w)


def test_solve_qp_diag_matches_closed_form():
    # min 1/2 (2y0^2 + y1^2) - (4 y0 + 2 y1) s.t. y0 + y1 <= 1
    res = solve_qp_diag(np.array([2.0, 1.0]), np.array([4.0, 2.0]), np.array([[1.0, 1.0]]), np.array([1.0]))
    # KKT: 2 y0 - 4 + l = 0, y1 - 2 + l = 0, y0 + y1 = 1  =>  l = 2
    np.testing.assert_allclose(res.point, [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(res.multipliers, [2.0], atol=1e-12)


@given(loads(), st.integers(1, 2), st.data())
def test_projection_oracles_agree(q, n_p, data):
    p = build_polytope(q, n_p)
    x = data.draw(vecs(n_p + 1))
    y = project(p, x).point
    assert p.contains(y)
    np.testing.assert_allclose(y, enumerate_project(p, x), atol=1e-6)
    np.testing.assert_allclose(y, dykstra_project(p, x).point, atol=1e-6)


@given(loads(), st.integers(1, 5), st.data())
def test_projection_idempotent_and_nonexpansive(q, n_p, data):
    p = build_polytope(q, n_p)
    x1, x2 = data.draw(vecs(n_p + 1)), data.draw(vecs(n_p + 1))
    y1, y2 = project(p, x1).point, project(p, x2).point
    np.testing.assert_allclose(project(p, y1).point, y1, atol=1e-9)
    assert np.linalg.norm(y1 - y2) <= np.linalg.norm(x1 - x2) + 1e-9


@given(loads(), st.integers(1, 5), st.data())
def test_projection_variational_inequality(q, n_p, data):
    # <x - P(x), w - P(x)> <= 0 for every feasible w
    p = build_polytope(q, n_p)
    x = data.draw(vecs(n_p + 1))
    y = project(p, x).point
    w = project(p, data.draw(vecs(n_p + 1))).point
    assert float((x - y) @ (w - y)) <= 1e-7 * (1 + np.linalg.norm(x))


def test_unbounded_energy_rows_ignored():
    q = LoadQoS(0, 1, -math.inf, math.inf, -math.inf, 2.0)
    p = build_polytope(q, 4)
    y = project(p, np.array([0, 1, 1, 1, 1.0])).point
    assert y[1:].sum() == pytest.approx(2.0)
