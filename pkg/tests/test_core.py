from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from newton_atlas.core import (
    CYCLE_TOL,
    CycleInfo,
    NewtonMap,
    RationalMap,
    aberth,
    chordal,
    critical_points,
    fixed_points,
    load_roots,
    newton_map_from_roots,
    orbit,
    pcf_residuals,
    refine_pcf,
    verify_head,
)
from newton_atlas.errors import ConfigError, DegreeTooLow, DuplicateRoots
from newton_atlas.fixtures import D4A_APPROX, D4B, P3

from conftest import nmap_of


def test_p3_rational_form():
    n = newton_map_from_roots(P3)
    z = np.array([0.3 + 0.2j, -1.1 + 0.5j, 2.0, 1j])
    assert np.allclose(n(z), (2 * z**3 + 1) / (3 * z**2), rtol=1e-13)


def test_degree_too_low_and_duplicates():
    with pytest.raises(DegreeTooLow):
        newton_map_from_roots([1, -1])
    with pytest.raises(DuplicateRoots):
        newton_map_from_roots([1, -1, 1 + 1e-12])
    with pytest.raises(ConfigError):
        newton_map_from_roots([1, -1, np.nan])


def test_load_roots(tmp_path):
    p = tmp_path / "r.json"
    p.write_text('{"roots": [[1, 0], [0, 2.5]]}')
    assert np.allclose(load_roots(p), [1, 2.5j])
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_roots(p)


def test_p3_critical_points():
    cs = critical_points(nmap_of("p3"))
    assert cs.total == 4
    assert len(cs.free) == 1 and abs(cs.free[0]) < 1e-10
    assert np.all(cs.multiplicities == 1)


def test_d4a_free_critical_points():
    free = critical_points(nmap_of("d4a")).free
    assert len(free) == 2
    for target in (0.408j, -0.408j):
        assert np.min(np.abs(free - target)) < 2e-3


def test_d4b_free_critical_points():
    free = np.sort_complex(critical_points(nmap_of("d4b")).free)
    assert abs(free[0] - (-0.3835508102)) < 1e-6
    assert abs(free[1] - 0.3740835220) < 1e-6


def test_multiplier_at_infinity_exact():
    infos = fixed_points(nmap_of("p3"))
    assert infos[-1].exact_multiplier == Fraction(3, 2)
    assert all(abs(i.multiplier) < 1e-12 for i in infos[:-1])
    assert abs(fixed_points(nmap_of("d4a"))[-1].multiplier - 4 / 3) < 1e-12


def test_verify_head_rejects_z_squared():
    assert not verify_head(RationalMap([1, 0, 0], [1])).verdict
    assert verify_head(nmap_of("d4b")).verdict


def test_orbits_of_paper_points():
    r = orbit(nmap_of("d4a"), 0.408j)
    assert isinstance(r, CycleInfo) and r.period == 4
    r = orbit(nmap_of("d4b"), 0.3740835220)
    assert isinstance(r, CycleInfo) and r.period == 4
    r = orbit(nmap_of("d4b"), -0.3835508102)
    assert isinstance(r, CycleInfo) and r.period == 2
    r = orbit(nmap_of("p3"), 1.0)
    assert isinstance(r, CycleInfo) and r.period == 1 and r.preperiod == 0


def test_refine_pcf_d4b_and_idempotence():
    n = nmap_of("d4b")
    targets = [(-0.3835508102, 2, 0), (0.3740835220, 4, 0)]
    roots = refine_pcf(n, targets)
    assert np.max(np.abs(pcf_residuals(NewtonMap(roots), targets))) < 1e-10
    again = refine_pcf(NewtonMap(roots), targets)
    assert np.max(np.abs(again - roots)) < 1e-12


def test_refine_pcf_d4a_near_paper_roots():
    roots = refine_pcf(NewtonMap(D4A_APPROX), [(0, 4, 0), (1, 4, 0)])
    for r in D4A_APPROX:
        assert np.min(np.abs(roots - r)) < 5e-3
    assert np.max(np.abs(pcf_residuals(NewtonMap(roots), [(0, 4, 0), (1, 4, 0)]))) < 1e-10


def test_chordal_metric():
    assert chordal(np.inf, np.inf) == 0
    # unit sphere: antipodes at distance 2
    assert abs(chordal(0, np.inf) - 2) < 1e-15
    assert abs(chordal(1, -1) - 2) < 1e-15
    assert abs(chordal(1, 1j) - np.sqrt(2)) < 1e-15


roots_strategy = st.lists(
    st.tuples(st.floats(-2, 2), st.floats(-2, 2)), min_size=3, max_size=6
).map(lambda xs: np.array([complex(a, b) for a, b in xs]))


def _separated(r):
    g = np.abs(r[:, None] - r[None, :])
    np.fill_diagonal(g, np.inf)
    return g.min() > 1e-2


@settings(max_examples=60, deadline=None)
@given(roots_strategy.filter(_separated))
def test_map_invariants(roots):
    n = newton_map_from_roots(roots)
    d = len(roots)
    infos = fixed_points(n)
    assert len(infos) == d + 1
    assert abs(infos[-1].multiplier - d / (d - 1)) < 1e-12
    assert critical_points(n).total == 2 * d - 2
    assert verify_head(n).verdict


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=2, max_size=7))
def test_aberth_recovers_roots(pairs):
    r = np.array([complex(a, b) for a, b in pairs])
    if not _separated(r):
        return
    found = aberth(np.poly(r))
    assert max(np.min(np.abs(found - z)) for z in r) < 1e-6


def test_orbit_period_is_minimal():
    n = nmap_of("d4b")
    res = orbit(n, 0.3740835220)
    z = res.representative
    for j in range(1, res.period):
        if res.period % j == 0:
            assert chordal(n.iterate(z, j), z) > CYCLE_TOL
