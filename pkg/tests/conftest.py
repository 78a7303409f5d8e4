import functools

import numpy as np
import pytest

from nstrack.elements import ElementPair, build_space
from nstrack.mesh import build_structured

PAIRS = [ElementPair.TaylorHood, ElementPair.Mini]


@functools.lru_cache(maxsize=None)
def cached_space(n, pair, quad_degree=6):
    return build_space(build_structured(n, n), ElementPair.parse(pair), quad_degree)


@pytest.fixture(params=PAIRS, ids=lambda p: p.value)
def pair(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def interior_field(space, f):
    """Interpolant of ``f`` with boundary dofs zeroed."""
    from nstrack.elements import interpolate
    fn = interpolate(space, "velocity", f)
    fn.coefficients[space.dirichlet_mask] = 0.0
    return fn


def pytest_terminal_summary(terminalreporter):
    from _acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
