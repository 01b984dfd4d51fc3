import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from roughevolve.controlled import CRPParams
from roughevolve.roughpath import brownian_lift, dyadic_grid
from roughevolve.scale import ScaleSpec

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(
            f"criterion {n:2d} [{'PASS' if ok else 'FAIL'}] {name}: {detail}")


@pytest.fixture
def params():
    return CRPParams()


@pytest.fixture
def heat_spec():
    return ScaleSpec(8, 1)


@pytest.fixture
def bm():
    """Two-dimensional Stratonovich Brownian lift on 2^8 cells of [0, 1]."""
    return brownian_lift(7, 2, dyadic_grid(1.0, 8))


def random_packed(spec, rng, decay=1.0):
    """Random packed vector with coefficients decaying like lambda_k^-decay."""
    return rng.standard_normal(spec.dim) / np.tile(spec.packed_lam, spec.n1) ** decay
