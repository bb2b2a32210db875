import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newton_atlas.errors import DegenerateTreeNoOrder
from newton_atlas.rays import (
    build_spanning_trees,
    bubble_ray,
    forward_image_test,
    graph_contacts,
    landing_residual,
    point_period,
    precedes,
    predecessor,
    predecessor_chain,
    ray_period,
    right_envelope,
    validate_abstract_newton_ray,
)
from newton_atlas.planar import FATOU

from conftest import builder_of, extended_of, nmap_of

OMEGA = -0.5531911255


def _d4b_rays():
    ext = extended_of("d4b")
    g = ext.builder.level(ext.level).graph
    return ext, g, sorted(ext.rays, key=lambda r: r.landing.real)


def test_d4b_two_rays_of_period_two():
    ext, g, rays = _d4b_rays()
    n = ext.nmap
    assert len(rays) == 2
    at_omega, at_image = rays
    assert abs(at_omega.landing - OMEGA) < 1e-5
    assert abs(at_image.landing - n(at_omega.landing)) < 1e-9
    for r in rays:
        assert point_period(n, r.landing) == 2
        assert not forward_image_test(n, r, 1, g, 1e-5)["ok"]
        assert forward_image_test(n, r, 2, g, 1e-5)["ok"]
        assert ray_period(n, r, g, max_period=4, tol=1e-5)[0] == 2
        assert len(graph_contacts(r, g)) == 1
        assert landing_residual(n, r) < 1e-5


def test_d4b_landing_is_repelling():
    _, _, rays = _d4b_rays()
    n = nmap_of("d4b")
    w = rays[0].landing
    assert abs(n(n(w)) - w) < 1e-10
    h = 1e-7
    deriv = (n(n(w + h)) - n(n(w - h))) / (2 * h)
    assert abs(deriv) > 1


def test_abstract_ray_validation():
    ext, g, rays = _d4b_rays()
    for r in rays:
        rep = validate_abstract_newton_ray(ext.nmap, r, g, max_period=3, tol=1e-5)
        assert rep.verdict, rep.summary()
        assert rep.data["period"] == 2


def test_ray_touching_graph_twice_fails():
    ext, g, rays = _d4b_rays()
    r = rays[0]
    k = len(r.trace) // 2
    on_graph = next(iter(g.edges.values())).trace[1]
    bent = dataclasses.replace(r, trace=np.insert(r.trace, k, on_graph))
    rep = validate_abstract_newton_ray(ext.nmap, bent, g, max_period=3, tol=1e-5)
    assert rep.status("single-intersection") == "fail"


def test_bubble_ray_starts_at_root():
    ext, _, rays = _d4b_rays()
    fam = build_spanning_trees([ext.builder.level(k) for k in range(4)], ext.nmap, ext.builder)
    br = bubble_ray(ext.builder, rays[0], fam)
    assert br.bubbles and fam.is_root(br.bubbles[0])


# predecessors


def _family(name, depth):
    b = builder_of(name)
    return build_spanning_trees([b.level(k) for k in range(depth + 1)], nmap_of(name), b)


@pytest.mark.parametrize("name,depth", [("p3", 5), ("d4b", 4)])
def test_predecessor_equivariance(name, depth):
    fam = _family(name, depth)
    lv = fam.levels[-1]
    g, vmap = lv.graph, lv.to_parent.vertex_map
    bubbles = [v for v in fam.vertices[-1] if g.vertices[v].kind == FATOU and not fam.is_root(v)]
    good = [v for v in bubbles if v not in fam.bad and fam.level_of(v) is not None and fam.level_of(v) >= 1]
    assert len(good) >= 100
    for v in good:
        pv = predecessor(fam, v)
        assert vmap[pv] == predecessor(fam, vmap[v]), v


def test_immediate_basin_is_own_predecessor(fixture_name):
    fam = _family(fixture_name, 2)
    for v in fam.levels[0].graph.vertices:
        if v != "inf":
            assert predecessor(fam, v) == v
            assert predecessor_chain(fam, v) == [v]


def test_predecessor_chain_shrinks_generation():
    fam = _family("p3", 3)
    g = fam.levels[-1].graph
    for v in fam.vertices[-1]:
        if g.vertices[v].kind == FATOU:
            chain = predecessor_chain(fam, v)
            assert fam.is_root(chain[0]) and chain[-1] == v
            assert len(set(chain)) == len(chain)


# right envelopes on synthetic rays landing at 0


def _spoke(angle, twist=0.0, n=60):
    r = np.linspace(1.0, 0.0, n)
    return r * np.exp(1j * (angle + twist * r))


angles = st.lists(st.integers(1, 63), min_size=1, max_size=6, unique=True).map(lambda ks: [k * np.pi / 32 for k in ks])


@settings(max_examples=60, deadline=None)
@given(angles, st.floats(-0.5, 0.5))
def test_envelope_idempotent(thetas, twist):
    rays = [_spoke(a, twist) for a in thetas]
    edge = _spoke(0.0)[::-1]
    env = right_envelope(rays, edge)
    assert right_envelope([env], edge) is env
    assert right_envelope(rays + [env], edge) is env
    assert right_envelope(rays[::-1], edge) is env
    # the envelope is the first spoke counterclockwise after the edge
    assert env is rays[int(np.argmin(thetas))]
    for r in rays:
        assert precedes(env, r, edge)


def test_envelope_needs_tree_edge():
    with pytest.raises(DegenerateTreeNoOrder):
        right_envelope([_spoke(1.0), _spoke(2.0)], None)
    one = _spoke(1.0)
    assert right_envelope([one], None) is one
