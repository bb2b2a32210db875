"""Reference polynomials used throughout the tests and the CLI."""

from __future__ import annotations

import json

import numpy as np

from .core import NewtonMap, refine_pcf

P3 = np.exp(2j * np.pi * np.arange(3) / 3)

# quartic with two free critical points on period-4 cycles (approximate constants)
D4A_APPROX = np.array([0.593 + 0.13j, -0.593 - 0.13j, -0.0665 + 1.157j, 0.0665 - 1.157j])
D4A_TARGETS = [(0, 4, 0), (1, 4, 0)]

# quartic whose free critical points lie on cycles of periods 2 and 4
D4B = np.array([1, -1, -0.0094672882 + 0.3728674604j, -0.0094672882 - 0.3728674604j])

_cache: dict = {}


def d4a_roots() -> np.ndarray:
    """D4A refined so that both free critical orbits close to 1e-10."""
    if "d4a" not in _cache:
        _cache["d4a"] = refine_pcf(NewtonMap(D4A_APPROX), D4A_TARGETS)
    return _cache["d4a"].copy()


def fixture_roots(name: str) -> np.ndarray:
    name = name.lower()
    if name == "p3":
        return P3.copy()
    if name == "d4a":
        return d4a_roots()
    if name == "d4b":
        return D4B.copy()
    raise KeyError(name)


def roots_json(roots) -> str:
    return json.dumps({"roots": [[float(z.real), float(z.imag)] for z in np.asarray(roots)]})
