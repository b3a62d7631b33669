import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from yaglom import BoundaryCase, ClosedFormBM, birth_death_chain, build_bm_closed_form, build_chain, two_state_chain

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def bm_killed():
    return build_bm_closed_form(ClosedFormBM(1.0, BoundaryCase.KILLED_BOTH, 513))


@pytest.fixture(scope="session")
def bm_reflect():
    return build_bm_closed_form(ClosedFormBM(1.0, BoundaryCase.REFLECTING_RIGHT, 513))


@pytest.fixture(scope="session")
def two_state():
    spec = two_state_chain()
    return spec, build_chain(spec)


@pytest.fixture(scope="session")
def bd_entrance():
    spec = birth_death_chain(1.0, lambda n: n**2, 30, BoundaryCase.ENTRANCE_INFINITY)
    return spec, build_chain(spec)


def golden():
    """(3 - sqrt 5)/2 and its partner, from the 2x2 characteristic polynomial."""
    r = np.sqrt(5.0)
    return (3 - r) / 2, (3 + r) / 2


MODELS = Path(__file__).resolve().parent.parent / "models"

_ACCEPTANCE = {}


def record(k, ok, detail):
    _ACCEPTANCE[k] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
