import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from predalloc.model import LoadQoS

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def loads(draw, box_only=False, zero_feasible=False):
    """A random load whose QoS set is non-empty for every horizon."""
    d_lo = draw(st.floats(-5, 3)) if not zero_feasible else draw(st.floats(-5, 0))
    width = draw(st.floats(0.5, 10))
    d_hi = d_lo + width
    if zero_feasible:
        d_hi = max(d_hi, 0.1)
    zeta = draw(st.floats(0.1, 5))
    zbar = draw(st.one_of(st.none(), st.floats(0.1, 5)))
    if box_only:
        return LoadQoS(d_lo, d_hi, zeta=zeta, zeta_bar=zbar)
    r = draw(st.floats(0.05, 3))
    # a constant trajectory at `mid` fits every horizon up to 5
    mid = draw(st.floats(d_lo, d_hi)) if not zero_feasible else 0.0
    e_lo = min(mid, 5 * mid) - draw(st.floats(0, 4))
    e_hi = max(mid, 5 * mid) + draw(st.floats(0, 4))
    e_lo, e_hi = (e_lo if draw(st.booleans()) else -math.inf), (e_hi if draw(st.booleans()) else math.inf)
    return LoadQoS(d_lo, d_hi, -r, r, e_lo, e_hi, zeta=zeta, zeta_bar=zbar)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> list of (label, ok, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


def record_criterion(n: int, label: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE.setdefault(n, []).append((label, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        body = "; ".join(f"{label}: {'ok' if ok else 'FAILED'}{' (' + d + ')' if d else ''}" for label, ok, d in parts)
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {body}")
