import functools

import numpy as np
import pytest

from newton_atlas.core import NewtonMap
from newton_atlas.fixtures import fixture_roots


@functools.lru_cache(maxsize=None)
def nmap_of(name: str) -> NewtonMap:
    return NewtonMap(fixture_roots(name))


@functools.lru_cache(maxsize=None)
def builder_of(name: str):
    from newton_atlas.newton_graph import NewtonGraphBuilder

    return NewtonGraphBuilder(nmap_of(name))


@functools.lru_cache(maxsize=None)
def extended_of(name: str, seed: int = 0):
    from newton_atlas.extended import end_to_end

    return end_to_end(nmap_of(name), seed=seed)


@pytest.fixture(params=["p3", "d4a", "d4b"])
def fixture_name(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@functools.lru_cache(maxsize=None)
def plms_of(name: str) -> tuple:
    """Polynomial-like restrictions reused from the end-to-end assembly."""
    return tuple(t.spec.plm for t in extended_of(name).trees)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
