import numpy as np
import pytest

from newton_atlas.errors import NotCoveredWithinBudget
from newton_atlas.newton_graph import (
    NewtonGraphBuilder,
    abstract_level,
    check_pullback_consistency,
    eventually_fixed_critical_points,
    graphs_isomorphic,
    point_on_graph,
    poles_covered_level,
    pull_back_level,
    select_level,
)
from newton_atlas.planar import validate_abstract_newton_graph
from newton_atlas.rays import PolylineIndex

from conftest import builder_of, nmap_of


def test_p3_first_level_contains_pole():
    n = nmap_of("p3")
    lev = pull_back_level(n, builder_of("p3").level(0), builder_of("p3"))
    assert lev.level == 1
    assert point_on_graph(lev.graph, 0j)
    assert poles_covered_level(n, 4, builder_of("p3")).level == 1


def test_d4b_poles_covered_by_level_two():
    assert poles_covered_level(nmap_of("d4b"), 4, builder_of("d4b")).level <= 2


def test_pole_coverage_needs_positive_budget():
    with pytest.raises(NotCoveredWithinBudget):
        poles_covered_level(nmap_of("p3"), 0)


def test_levels_are_nested(fixture_name):
    b = builder_of(fixture_name)
    for n in range(3):
        lo, hi = b.level(n).graph, b.level(n + 1).graph
        assert set(lo.edges) <= set(hi.edges)
        assert set(lo.vertices) <= set(hi.vertices)
        for e in lo.edges:
            assert np.array_equal(lo.edges[e].trace, hi.edges[e].trace)


def test_edges_map_onto_parent_edges(fixture_name):
    n = nmap_of(fixture_name)
    lev = builder_of(fixture_name).level(2)
    f = lev.to_parent
    assert not f.check_edges()
    parent = lev.to_parent.codomain
    for e, path in f.edge_map.items():
        (p, _), = path
        tr = lev.graph.edges[e].trace
        inner = tr[1:-1][np.isfinite(tr[1:-1])]
        img = n(inner[:: max(1, len(inner) // 20)])
        idx = PolylineIndex([parent.edges[p].trace], cap=1e-3)
        assert np.max(idx.distance(img)) < 1e-6, e


def test_abstract_newton_graph_levels(fixture_name):
    b = builder_of(fixture_name)
    n = nmap_of(fixture_name)
    start = abstract_level(n, b)
    for k in (start, start + 1):
        lev = b.level(k)
        rep = validate_abstract_newton_graph(lev.graph, lev.self_map(), k, lev.delta_edges)
        assert rep.verdict, rep.summary()
        assert rep.data["degree"] == n.d


@pytest.mark.parametrize("name", ["p3", "d4a", "d4b"])
def test_pullback_consistency(name):
    b = builder_of(name)
    cover = poles_covered_level(nmap_of(name), 4, b).level
    ok, why = check_pullback_consistency(b, 1, cover + 1)
    assert ok, why


def test_isomorphism_detects_differences():
    b = builder_of("p3")
    ok, _ = graphs_isomorphic(b.level(1).graph, b.level(2).graph)
    assert not ok
    ok, _ = graphs_isomorphic(b.level(2).graph, b.level(2).graph.copy())
    assert ok


def test_p3_critical_point_lands_on_infinity():
    assert len(eventually_fixed_critical_points(nmap_of("p3"))) == 1
    assert eventually_fixed_critical_points(nmap_of("d4b")) == []


def test_select_level_p3_without_trees():
    level, info = select_level(nmap_of("p3"), [], builder_of("p3"))
    assert level == info["abstract_level"] == 1


def test_select_level_separates_d4b_trees():
    from newton_atlas.renormalization import FaceLocator, group_pieces, periodic_postcritical

    n, b = nmap_of("d4b"), builder_of("d4b")
    groups = group_pieces(periodic_postcritical(n), FaceLocator(b.level(4).graph))
    anchors = [g[0].point for g in groups]
    level, info = select_level(n, anchors, b)
    assert level == 2
    assert info[2]["separated"]


def test_builder_is_deterministic():
    a = NewtonGraphBuilder(nmap_of("d4b")).level(2).graph.dumps()
    assert a == builder_of("d4b").level(2).graph.dumps()
