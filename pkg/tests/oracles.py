"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import itertools
import random

import numpy as np

from newton_atlas.planar import GraphMap, PlanarGraph


class _UF:
    def __init__(self):
        self.p = {}

    def find(self, x):
        self.p.setdefault(x, x)
        while self.p[x] != x:
            self.p[x] = self.p[self.p[x]]
            x = self.p[x]
        return x

    def union(self, a, b):
        self.p[self.find(a)] = self.find(b)


def corner_faces(g: PlanarGraph) -> dict:
    """Face label of each corner ``(v, i)`` (between rotation slots i and i+1), by union-find.

    Walking dart ``d`` from ``v`` to ``w`` keeps the face on the left; that face
    owns the corner after ``d`` at ``v`` and the corner before the return dart at ``w``.
    """
    uf = _UF()
    pos = {}
    for v, rot in g.rotations.items():
        for i, d in enumerate(rot):
            pos[d] = (v, i)
        for i in range(len(rot)):
            uf.find((v, i))
    for e in g.edges:
        for side in (0, 1):
            d, back = (e, side), (e, 1 - side)
            v, i = pos[d]
            w, j = pos[back]
            uf.union((v, i), (w, (j - 1) % len(g.rotations[w])))
    return {c: uf.find(c) for c in uf.p}


def face_count(g: PlanarGraph) -> int:
    return len(set(corner_faces(g).values()))


def regular_extension_oracle(f: GraphMap, extra_wraps: int = 1):
    """Brute force over sector images: return local degrees of a valid assignment, or None.

    Each domain corner maps onto a counterclockwise arc of corners at the
    image vertex from the image of its first dart to the image of its second,
    possibly wrapping ``t`` extra times.  An assignment is valid when every
    vertex sweeps a whole multiple of its image valence and no face covers a
    corner at any image vertex twice.
    """
    dom, cod = f.domain, f.codomain
    cpos = {}
    for y, rot in cod.rotations.items():
        for i, d in enumerate(rot):
            cpos[d] = i

    def image(d):
        e2, o = f.edge_map[d[0]][0]
        return (e2, d[1]) if o > 0 else (e2, 1 - d[1])

    faces = corner_faces(dom)
    corners = []
    for v, rot in dom.rotations.items():
        y = f.vertex_map[v]
        n = cod.valence(y)
        for i in range(len(rot)):
            a, b = rot[i], rot[(i + 1) % len(rot)]
            ia, ib = cpos[image(a)], cpos[image(b)]
            base = (ib - ia) % n or n
            opts = [[(ia + s) % n for s in range(base + t * n)] for t in range(extra_wraps + 1)]
            corners.append((v, y, faces[(v, i)], opts))

    best = None

    def search(k, used, sweep):
        nonlocal best
        if best is not None:
            return
        if k == len(corners):
            degs = {}
            for v in dom.rotations:
                n = cod.valence(f.vertex_map[v])
                if sweep.get(v, 0) % n:
                    return
                degs[v] = sweep.get(v, 0) // n
            best = degs
            return
        v, y, face, opts = corners[k]
        for arc in opts:
            keys = [(face, y, c) for c in arc]
            if len(set(keys)) < len(keys) or any(x in used for x in keys):
                continue
            sweep[v] = sweep.get(v, 0) + len(arc)
            search(k + 1, used | set(keys), sweep)
            sweep[v] -= len(arc)

    search(0, frozenset(), {})
    return best


# ---------------------------------------------------------------------------
# random graphs and maps


def _random_rotation(rng, g):
    for v in g.rotations:
        rng.shuffle(g.rotations[v])


def random_planar_graph(rng: random.Random, n_vertices: int, n_edges: int, tries: int = 200):
    """Connected multigraph without loops and a planar rotation system, or None."""
    for _ in range(tries):
        g = PlanarGraph()
        for i in range(n_vertices):
            g.add_vertex(f"v{i}")
        verts = list(g.vertices)
        order = verts[:]
        rng.shuffle(order)
        k = 0
        for i in range(1, len(order)):
            g.add_edge(f"e{k}", order[i], order[rng.randrange(i)])
            k += 1
        while k < n_edges:
            a, b = rng.sample(verts, 2)
            g.add_edge(f"e{k}", a, b)
            k += 1
        _random_rotation(rng, g)
        if len(g.vertices) - len(g.edges) + face_count(g) == 2:
            return g
    return None


def power_map(k: int, m: int, rotate: int = 0) -> GraphMap:
    """``z -> z^k`` on ``m`` rays from 0 to infinity, optionally twisted."""
    cod = PlanarGraph()
    cod.add_vertex("0")
    cod.add_vertex("inf")
    for j in range(m):
        cod.add_edge(f"c{j}", "0", "inf")
    cod.rotations["inf"] = cod.rotations["inf"][::-1]
    dom = PlanarGraph()
    dom.add_vertex("0")
    dom.add_vertex("inf")
    for j in range(k * m):
        dom.add_edge(f"d{j}", "0", "inf")
    dom.rotations["inf"] = dom.rotations["inf"][::-1]
    emap = {f"d{j}": [(f"c{(j + rotate) % m}", 1)] for j in range(k * m)}
    return GraphMap(dom, cod, {"0": "0", "inf": "inf"}, emap)


def relabel_map(rng: random.Random, g: PlanarGraph) -> GraphMap:
    """A copy of ``g`` mapped onto ``g`` by the identity."""
    dom = g.copy()
    return GraphMap(dom, g, {v: v for v in g.vertices}, {e: [(e, 1)] for e in g.edges})


def random_graph_map(rng: random.Random, cod: PlanarGraph, n_vertices: int, n_edges: int, tries: int = 100):
    """Random honest graph map from a random planar domain into ``cod``."""
    cverts = list(cod.vertices)
    cedges = list(cod.edges)
    for _ in range(tries):
        vmap = {f"u{i}": rng.choice(cverts) for i in range(n_vertices)}
        dom = PlanarGraph()
        for v in vmap:
            dom.add_vertex(v)
        emap = {}
        ok = True
        for k in range(n_edges):
            e2 = rng.choice(cedges)
            o = rng.choice((1, -1))
            a, b = cod.edges[e2].ends
            if o < 0:
                a, b = b, a
            us = [v for v in vmap if vmap[v] == a]
            ws = [v for v in vmap if vmap[v] == b]
            pairs = [(u, w) for u in us for w in ws if u != w]
            if not pairs:
                ok = False
                break
            u, w = rng.choice(pairs)
            dom.add_edge(f"f{k}", u, w)
            emap[f"f{k}"] = [(e2, o)]
        if not ok:
            continue
        used = {v for e in dom.edges.values() for v in e.ends}
        for v in list(dom.vertices):
            if v not in used:
                del dom.vertices[v]
                del dom.rotations[v]
                del vmap[v]
        if not dom.edges or not dom.is_connected():
            continue
        _random_rotation(rng, dom)
        if len(dom.vertices) - len(dom.edges) + face_count(dom) != 2:
            continue
        return GraphMap(dom, cod, vmap, emap)
    return None


def twist(rng: random.Random, f: GraphMap) -> GraphMap:
    """Swap the images of two domain edges with the same end images, or permute a rotation."""
    dom = f.domain.copy()
    emap = {e: list(p) for e, p in f.edge_map.items()}
    if rng.random() < 0.5:
        v = rng.choice([v for v in dom.rotations if len(dom.rotations[v]) > 1] or list(dom.rotations))
        rot = dom.rotations[v]
        if len(rot) > 2:
            i, j = rng.sample(range(len(rot)), 2)
            rot[i], rot[j] = rot[j], rot[i]
            if len(dom.vertices) - len(dom.edges) + face_count(dom) != 2:
                rot[i], rot[j] = rot[j], rot[i]
    else:
        es = list(emap)
        for a, b in itertools.combinations(rng.sample(es, len(es)), 2):
            ea, eb = f.domain.edges[a].ends, f.domain.edges[b].ends
            ia, ib = emap[a][0], emap[b][0]
            pa = tuple(f.vertex_map[x] for x in ea)
            pb = tuple(f.vertex_map[x] for x in eb)
            if pa == pb and ia != ib:
                emap[a], emap[b] = [ib], [ia]
                break
    return GraphMap(dom, f.codomain, dict(f.vertex_map), emap)


def delete_edge(rng: random.Random, f: GraphMap):
    es = list(f.domain.edges)
    rng.shuffle(es)
    for e in es:
        keep = [x for x in es if x != e]
        sub = f.domain.subgraph(keep)
        if len(sub.vertices) == len(f.domain.vertices) and sub.is_connected() and sub.edges:
            return GraphMap(sub, f.codomain, dict(f.vertex_map), {x: f.edge_map[x] for x in keep})
    return None


def corpus(seed: int):
    """One graph map from a mixed family, keyed by seed."""
    rng = random.Random(seed)
    kind = seed % 5
    if kind == 0:
        k, m = rng.randint(1, 4), rng.randint(1, 2)
        f = power_map(k, m, rotate=rng.randrange(m))
        if k * m > 8:
            f = power_map(2, m)
        return f if rng.random() < 0.6 else twist(rng, f)
    if kind == 1:
        g = random_planar_graph(rng, rng.randint(2, 5), rng.randint(2, 8))
        return relabel_map(rng, g) if g is not None else power_map(2, 1)
    if kind == 2:
        g = random_planar_graph(rng, rng.randint(2, 5), rng.randint(2, 8))
        f = relabel_map(rng, g) if g is not None else power_map(3, 2)
        return twist(rng, f)
    if kind == 3:
        f = power_map(rng.randint(2, 4), rng.randint(1, 2))
        out = delete_edge(rng, f)
        return out if out is not None else f
    cod = random_planar_graph(rng, rng.randint(2, 3), rng.randint(2, 4))
    f = random_graph_map(rng, cod, rng.randint(2, 4), rng.randint(2, 6)) if cod is not None else None
    return f if f is not None else power_map(1, 3)
