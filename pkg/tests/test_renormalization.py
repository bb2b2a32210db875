import numpy as np
import pytest
from scipy import ndimage

from newton_atlas.errors import BudgetExceeded
from newton_atlas.planar import PlanarGraph
from newton_atlas.renormalization import (
    FaceLocator,
    HubbardTreeSpec,
    count_preimages,
    critical_points_of_iterate,
    filled_julia_estimate,
    find_renorm_domains,
    group_pieces,
    periodic_postcritical,
    thicken,
    validate_abstract_extended_hubbard_tree,
)
from newton_atlas.planar import GraphMap
from newton_atlas.rays import PolylineIndex

from conftest import builder_of, extended_of, nmap_of, plms_of

D4B_CRIT = (0.3740835220, -0.3835508102)


def test_d4b_periodic_postcritical_points():
    pts = periodic_postcritical(nmap_of("d4b"))
    assert len(pts) == 6
    assert sorted(p.period for p in pts) == [2, 2, 4, 4, 4, 4]
    for c in D4B_CRIT:
        assert min(abs(p.point - c) for p in pts) < 1e-6


def test_d4b_groups_and_domains():
    n, b = nmap_of("d4b"), builder_of("d4b")
    groups = group_pieces(periodic_postcritical(n), FaceLocator(b.level(3).graph))
    assert len(groups) == 2
    doms = find_renorm_domains(n, b.level(2).graph, 2, groups)
    assert [d.period for d in doms] == [2, 2]
    assert [d.piece_period for d in doms] == [2, 2]
    assert doms[0].face != doms[1].face


def test_iterate_cap():
    n, b = nmap_of("d4b"), builder_of("d4b")
    groups = group_pieces(periodic_postcritical(n), FaceLocator(b.level(3).graph))
    with pytest.raises(BudgetExceeded):
        find_renorm_domains(n, b.level(2).graph, 2, groups, max_period=1)


@pytest.mark.parametrize("name", ["d4a", "d4b"])
def test_proper_degree_four(name):
    for plm in plms_of(name):
        assert plm.degree == 4
        assert count_preimages(plm, plm.domain.anchor) == 4
        crit = critical_points_of_iterate(plm)
        assert sum(c[1] - 1 for c in crit) == 3


def test_d4b_components_swapped():
    n = nmap_of("d4b")
    a, b = plms_of("d4b")
    for src, dst in ((a, b), (b, a)):
        rows, cols = np.nonzero(src.julia_mask)
        z = src.viewport.coords()[rows, cols]
        img = n(z)
        assert np.mean(dst.contains(img, dilate=2)) > 0.95
        assert not np.any(src.contains(img, dilate=0) & ~dst.contains(img, dilate=2))


def test_domain_inside_range():
    for plm in plms_of("d4b"):
        assert not np.any(plm.domain_mask & ~plm.range_mask)
        assert plm.julia_mask.sum() > 100
        assert not np.any(plm.julia_mask & ~plm.domain_mask)


@pytest.mark.parametrize("idx", [0, 1])
def test_eps_stability_d4b(idx):
    plm = plms_of("d4b")[idx]
    half = thicken(nmap_of("d4b"), plm.domain, eps=plm.eps / 2, check=False)
    assert half.degree == plm.degree
    # filled Julia estimates on the same grid agree up to one pixel
    other, _ = filled_julia_estimate(half, viewport=plm.viewport)
    a, b = plm.julia_mask, other
    assert not np.any(a & ~ndimage.binary_dilation(b))
    assert not np.any(b & ~ndimage.binary_dilation(a))


def test_thicken_checks_half_eps():
    plm = plms_of("d4b")[0]
    again = thicken(nmap_of("d4b"), plm.domain, eps=plm.eps, check=True)
    assert again.degree == 4


@pytest.mark.parametrize("name", ["d4a", "d4b"])
def test_trees_valid_and_off_newton_graph(name):
    ext = extended_of(name)
    g = ext.builder.level(ext.level).graph
    idx = PolylineIndex([e.trace for e in g.edges.values()], cap=1e-3)
    for t in ext.trees:
        rep = validate_abstract_extended_hubbard_tree(t.spec)
        assert rep.verdict, rep.summary()
        pts = np.concatenate([e.trace for e in t.spec.tree.edges.values()])
        assert np.min(idx.distance(pts)) > 1e-5


def _single_vertex_tree(vmap_target="a", degree=1):
    g = PlanarGraph()
    g.add_vertex("a", "critical", 0j, role="critical")
    f = GraphMap(g, g, {"a": vmap_target}, {})
    return HubbardTreeSpec(g, f, degree, 1, degenerate=True)


def test_degenerate_tree():
    assert validate_abstract_extended_hubbard_tree(_single_vertex_tree()).verdict
    assert not validate_abstract_extended_hubbard_tree(_single_vertex_tree(degree=2)).verdict


def _basilica_tree(swap_critical=False):
    # z^2 - 1: critical point 0 and its partner -1 in a 2-cycle, beta fixed point at the end
    g = PlanarGraph()
    g.add_vertex("c", "tree", 0j, role="critical", local_degree=2)
    g.add_vertex("v", "tree", -1 + 0j, role="postcritical")
    g.add_vertex("b", "tree", 1.618 + 0j, role="cycle-point")
    g.add_vertex("a", "tree", -0.618 + 0j, role="cycle-point")
    g.add_edge("va", "v", "a", np.array([-1, -0.618]), "H")
    g.add_edge("ac", "a", "c", np.array([-0.618, 0]), "H")
    g.add_edge("cb", "c", "b", np.array([0, 1.618]), "H")
    vmap = {"c": "v", "v": "c", "a": "a", "b": "b"}
    if swap_critical:
        vmap["b"] = "c"
    emap = {"va": [("ac", -1)], "ac": [("va", -1)], "cb": [("va", 1), ("ac", 1), ("cb", 1)]}
    return HubbardTreeSpec(g, GraphMap(g, g, vmap, emap), 2, 1)


def test_basilica_tree():
    rep = validate_abstract_extended_hubbard_tree(_basilica_tree())
    assert rep.verdict, rep.summary()
    assert rep.data["cycle_counts"] == {1: 2}
    bad = validate_abstract_extended_hubbard_tree(_basilica_tree(swap_critical=True))
    assert bad.status("cycles") == "fail"
