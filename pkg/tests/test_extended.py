import dataclasses
import json

import numpy as np
import pytest

from newton_atlas.core import NewtonMap
from newton_atlas.errors import NoConvergence
from newton_atlas.extended import (
    crossing_violations,
    edge_dynamics,
    ensure_postcritically_finite,
    same_after_deleting_rays,
    validate_extended,
    validate_extended_json,
)
from newton_atlas.fixtures import D4A_APPROX

from conftest import extended_of


@pytest.mark.parametrize("name", ["d4a", "d4b"])
def test_all_nine_conditions(name):
    ext = extended_of(name)
    rep = validate_extended(ext, 1e-5)
    assert [c.cid for c in rep.conditions] == [str(k) for k in range(1, 10)]
    assert rep.verdict, rep.summary()
    assert edge_dynamics(ext, 1e-5).verdict


@pytest.mark.parametrize("name", ["d4a", "d4b"])
def test_ray_seed_does_not_change_the_rest(name):
    a, b = extended_of(name, 0), extended_of(name, 1)
    assert a.dumps() != b.dumps()
    assert same_after_deleting_rays(a, b)


def test_p3_has_no_trees():
    ext = extended_of("p3")
    assert ext.trees == [] and ext.rays == []
    assert set(ext.graph.edges) == set(ext.builder.level(ext.level).graph.edges)
    assert validate_extended(ext).verdict


def test_edge_types_and_planarity():
    ext = extended_of("d4b")
    kinds = {e.etype for e in ext.graph.edges.values()}
    assert kinds == {"N", "H", "R"}
    assert crossing_violations(ext.graph) == []


def test_json_round_trip_validates():
    data = json.loads(extended_of("d4b").dumps())
    rep = validate_extended_json(data)
    assert rep.verdict, rep.summary()
    assert rep.status(1) == "pass" and rep.status(8) == "pass" and rep.status(9) == "pass"
    assert rep.status(3) == "unchecked"


def test_json_wrong_degree_fails_critical_count():
    data = json.loads(extended_of("d4b").dumps())
    data["degree"] = 5
    rep = validate_extended_json(data)
    assert rep.status(9) == "fail"


def test_json_inconsistent_map_fails():
    data = json.loads(extended_of("d4b").dumps())
    vm = data["maps"][0]["vertex_map"]
    v = next(k for k in sorted(vm) if vm[k] != "inf" and k != "inf")
    vm[v] = "inf"
    assert validate_extended_json(data).status(8) == "fail"


def test_two_rays_on_one_tree_fail():
    ext = extended_of("d4b")
    extra = dataclasses.replace(ext.rays[0], id="R9")
    broken = dataclasses.replace(ext, rays=ext.rays + [extra])
    rep = validate_extended(broken, 1e-5)
    assert rep.status(6) == "fail"
    assert "2 periodic rays" in rep.first_failure().witness


def test_generic_roots_are_rejected():
    nm = NewtonMap(np.array([0.3 + 0.1j, -1.2, 0.7j, 2 - 0.5j]))
    with pytest.raises(NoConvergence):
        ensure_postcritically_finite(nm)


def test_approximate_roots_are_refined():
    nm, info = ensure_postcritically_finite(NewtonMap(np.asarray(D4A_APPROX, dtype=complex)))
    assert info["refined"]
    assert info["targets"] == [[4, 0], [4, 0]]
    assert all("period 4" in v for v in info["orbits"].values())
