"""Embedded graphs on the sphere given by rotation systems.

An edge ``e`` joins ``ends[0]`` to ``ends[1]``; its two darts (edge-ends) are
``(e, 0)`` leaving the tail and ``(e, 1)`` leaving the head.  The rotation at
a vertex lists its darts in counterclockwise order.  Faces are traced with the
face on the left: after arriving at a vertex through dart ``d'`` the walk
leaves through the predecessor of ``d'``.  Bounded faces of a plane drawing
are therefore walked counterclockwise.
"""

from __future__ import annotations

import copy
import json
from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DisconnectedGraph, NonInjectiveOnEdge
from .report import FAIL, INDETERMINATE, PASS, ValidationReport

Dart = tuple  # (edge id, side)

INFINITY = "infinity"
FATOU = "fatou"
JULIA = "julia"
TREE = "tree"


@dataclass
class Vertex:
    id: str
    kind: str = FATOU
    anchor: complex | None = None
    data: dict = field(default_factory=dict)


@dataclass
class Edge:
    id: str
    ends: tuple
    trace: np.ndarray | None = None
    etype: str | None = None
    data: dict = field(default_factory=dict)


@dataclass
class Corner:
    vertex: str
    a: Dart | None
    b: Dart | None
    face: int


@dataclass
class Face:
    id: int
    darts: list
    corners: list


def dart_key(d: Dart) -> str:
    return f"{d[0]}:{d[1]}"


def parse_dart(s: str) -> Dart:
    e, side = s.rsplit(":", 1)
    return (e, int(side))


class PlanarGraph:
    def __init__(self, meta: dict | None = None):
        self.vertices: dict[str, Vertex] = {}
        self.edges: dict[str, Edge] = {}
        self.rotations: dict[str, list] = {}
        self.meta: dict = dict(meta or {})

    # -- construction -------------------------------------------------------

    def add_vertex(self, vid, kind=FATOU, anchor=None, **data) -> Vertex:
        v = Vertex(str(vid), kind, anchor, dict(data))
        self.vertices[v.id] = v
        self.rotations.setdefault(v.id, [])
        return v

    def add_edge(self, eid, u, v, trace=None, etype=None, positions=None, **data) -> Edge:
        """Add an edge; ``positions`` gives insertion indices into both rotations."""
        eid = str(eid)
        e = Edge(eid, (str(u), str(v)), None if trace is None else np.asarray(trace, complex), etype, dict(data))
        self.edges[eid] = e
        pu, pv = (None, None) if positions is None else positions
        ru = self.rotations[e.ends[0]]
        ru.insert(len(ru) if pu is None else pu, (eid, 0))
        rv = self.rotations[e.ends[1]]
        rv.insert(len(rv) if pv is None else pv, (eid, 1))
        return e

    def copy(self) -> "PlanarGraph":
        return copy.deepcopy(self)

    # -- dart algebra ---------------------------------------------------------

    def dart_vertex(self, d: Dart) -> str:
        return self.edges[d[0]].ends[d[1]]

    @staticmethod
    def opposite(d: Dart) -> Dart:
        return (d[0], 1 - d[1])

    def _index(self):
        idx = getattr(self, "_pos_cache", None)
        if idx is None or idx[0] != self._signature():
            pos = {}
            for v, rot in self.rotations.items():
                for i, d in enumerate(rot):
                    pos[d] = (v, i)
            idx = (self._signature(), pos)
            self._pos_cache = idx
        return idx[1]

    def _signature(self):
        return tuple((v, tuple(r)) for v, r in self.rotations.items())

    def succ(self, d: Dart) -> Dart:
        v = self.dart_vertex(d)
        rot = self.rotations[v]
        return rot[(rot.index(d) + 1) % len(rot)]

    def pred(self, d: Dart) -> Dart:
        v = self.dart_vertex(d)
        rot = self.rotations[v]
        return rot[(rot.index(d) - 1) % len(rot)]

    def valence(self, v: str) -> int:
        return len(self.rotations[v])

    def neighbors(self, v: str):
        return [self.dart_vertex(self.opposite(d)) for d in self.rotations[v]]

    def darts(self):
        for e in self.edges:
            yield (e, 0)
            yield (e, 1)

    # -- structure ------------------------------------------------------------

    def is_connected(self) -> bool:
        if not self.vertices:
            return True
        start = next(iter(self.vertices))
        seen = {start}
        queue = deque([start])
        while queue:
            v = queue.popleft()
            for w in self.neighbors(v):
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        return len(seen) == len(self.vertices)

    def check_rotations(self) -> None:
        seen = []
        for v, rot in self.rotations.items():
            for d in rot:
                if self.dart_vertex(d) != v:
                    raise ValueError(f"dart {d} listed at {v}")
                seen.append(d)
        if sorted(seen) != sorted(self.darts()):
            raise ValueError("rotation system does not list every dart exactly once")

    def faces(self) -> list[Face]:
        if not self.is_connected():
            raise DisconnectedGraph("face tracing needs a connected graph")
        if not self.edges:
            return [Face(0, [], [Corner(v, None, None, 0) for v in self.vertices])]
        rotpos = {}
        for v, rot in self.rotations.items():
            for i, d in enumerate(rot):
                rotpos[d] = i
        out = []
        visited = set()
        for start in sorted(self.darts()):
            if start in visited:
                continue
            fid = len(out)
            walk, corners = [], []
            d = start
            while True:
                visited.add(d)
                walk.append(d)
                back = self.opposite(d)
                w = self.dart_vertex(back)
                rot = self.rotations[w]
                nxt = rot[(rotpos[back] - 1) % len(rot)]
                corners.append(Corner(w, nxt, back, fid))
                d = nxt
                if d == start:
                    break
            out.append(Face(fid, walk, corners))
        return out

    def face_of_dart(self) -> dict:
        return {d: f.id for f in self.faces() for d in f.darts}

    def euler_characteristic(self) -> int:
        return len(self.vertices) - len(self.edges) + len(self.faces())

    def subgraph(self, edge_ids, keep_vertices=None) -> "PlanarGraph":
        """Subgraph on the given edges, rotation order inherited."""
        edge_ids = set(edge_ids)
        g = PlanarGraph(dict(self.meta))
        verts = set(keep_vertices or ())
        for e in edge_ids:
            verts.update(self.edges[e].ends)
        for vid in self.vertices:
            if vid in verts:
                v = self.vertices[vid]
                g.vertices[vid] = Vertex(v.id, v.kind, v.anchor, dict(v.data))
                g.rotations[vid] = [d for d in self.rotations[vid] if d[0] in edge_ids]
        for eid in self.edges:
            if eid in edge_ids:
                e = self.edges[eid]
                g.edges[eid] = Edge(e.id, e.ends, e.trace, e.etype, dict(e.data))
        return g

    def infinity(self) -> str | None:
        for v in self.vertices.values():
            if v.kind == INFINITY:
                return v.id
        return None

    # -- serialization --------------------------------------------------------

    def to_json(self) -> dict:
        verts = []
        for v in self.vertices.values():
            item = {"id": v.id, "kind": v.kind}
            if v.anchor is not None:
                item["anchor"] = [float(np.real(v.anchor)), float(np.imag(v.anchor))]
            if v.data:
                item["data"] = v.data
            verts.append(item)
        edges = []
        for e in self.edges.values():
            item = {"id": e.id, "ends": list(e.ends)}
            if e.trace is not None:
                item["trace"] = [[float(z.real), float(z.imag)] for z in e.trace]
            if e.etype is not None:
                item["type"] = e.etype
            if e.data:
                item["data"] = e.data
            edges.append(item)
        out = {
            "vertices": verts,
            "rotations": {v: [dart_key(d) for d in rot] for v, rot in self.rotations.items()},
            "edges": edges,
        }
        out.update(self.meta)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "PlanarGraph":
        meta = {k: v for k, v in data.items() if k not in ("vertices", "rotations", "edges", "maps")}
        g = cls(meta)
        for item in data["vertices"]:
            anchor = item.get("anchor")
            g.vertices[item["id"]] = Vertex(
                item["id"], item.get("kind", FATOU), None if anchor is None else complex(*anchor), item.get("data", {})
            )
        for item in data["edges"]:
            trace = item.get("trace")
            g.edges[item["id"]] = Edge(
                item["id"],
                tuple(item["ends"]),
                None if trace is None else np.array([complex(a, b) for a, b in trace], dtype=complex),
                item.get("type"),
                item.get("data", {}),
            )
        g.rotations = {v: [parse_dart(s) for s in rot] for v, rot in data["rotations"].items()}
        for v in g.vertices:
            g.rotations.setdefault(v, [])
        return g

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


# ---------------------------------------------------------------------------
# geometry helpers


def _chart(g: PlanarGraph, v: str, pts):
    """Local coordinate at ``v``: ``1/z`` at infinity, ``z - anchor`` otherwise."""
    vert = g.vertices[v]
    pts = np.asarray(pts, dtype=complex)
    if vert.kind == INFINITY:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(np.isfinite(pts), 1 / pts, 0)
    return pts - vert.anchor


def vertex_radius(g: PlanarGraph, v: str, fraction: float = 0.3) -> float:
    """Radius of a disk around ``v`` (in its chart) missing every other vertex."""
    return _vertex_radii(g, fraction)[v]


def _vertex_radii(g: PlanarGraph, fraction: float = 0.3) -> dict:
    ids = [w.id for w in g.vertices.values() if w.anchor is not None and w.kind != INFINITY]
    pts = np.array([g.vertices[i].anchor for i in ids], dtype=complex)
    out = {}
    if len(ids) > 1:
        tree = cKDTree(np.column_stack([pts.real, pts.imag]))
        dist, _ = tree.query(np.column_stack([pts.real, pts.imag]), k=2)
        near = dist[:, 1]
    else:
        near = np.full(len(ids), np.inf)
    has_inf = g.infinity() is not None
    for i, vid in enumerate(ids):
        r = min(near[i], 1e6) if has_inf else near[i]
        out[vid] = fraction * r if np.isfinite(r) else 1.0
    big = max(float(np.max(np.abs(pts))) if len(ids) else 0.0, 1.0)
    for w in g.vertices.values():
        if w.id not in out:
            out[w.id] = fraction / big
    return out


def dart_direction(g: PlanarGraph, d: Dart, radius: float | None = None) -> float:
    """Argument, in the chart at its vertex, where dart ``d`` first leaves a small disk.

    Disjoint curves leave a disk around their common endpoint in the same
    cyclic order as their germs, so this reads off the rotation exactly once
    the radius excludes every other vertex.
    """
    e = g.edges[d[0]]
    tr = e.trace if d[1] == 0 else e.trace[::-1]
    v = g.dart_vertex(d)
    rho = vertex_radius(g, v) if radius is None else radius
    rel = _chart(g, v, tr)
    dist = np.abs(rel)
    out = np.nonzero(dist > rho)[0]
    if out.size == 0:
        j = int(np.argmax(dist))
        return float(np.angle(rel[j]))
    j = int(out[0])
    if j == 0:
        return float(np.angle(rel[0]))
    r0, r1 = dist[j - 1], dist[j]
    t = (rho - r0) / (r1 - r0)
    return float(np.angle(rel[j - 1] + t * (rel[j] - rel[j - 1])))


def set_rotations_from_geometry(g: PlanarGraph) -> None:
    """Order the darts at every vertex counterclockwise by departure angle."""
    at = defaultdict(list)
    for d in g.darts():
        at[g.dart_vertex(d)].append(d)
    radii = _vertex_radii(g)
    for v in g.vertices:
        rho = radii[v]
        g.rotations[v] = sorted(at[v], key=lambda d: (dart_direction(g, d, rho), d))


def face_polygon(g: PlanarGraph, face: Face, arc_samples: int = 64) -> np.ndarray:
    """Closed polyline in the plane following the boundary walk of ``face``.

    Passages through the vertex at infinity are replaced by arcs on a large
    circle swept counterclockwise, which keeps the face on the left.
    """
    pts = []
    inf = g.infinity()
    walk = face.darts
    for k, d in enumerate(walk):
        e = g.edges[d[0]]
        tr = e.trace if d[1] == 0 else e.trace[::-1]
        tr = tr[np.isfinite(tr)]
        if pts and abs(pts[-1][-1] - tr[0]) == 0:
            tr = tr[1:]
        pts.append(tr)
        head = g.dart_vertex(g.opposite(d))
        if head == inf:
            nxt = walk[(k + 1) % len(walk)]
            e2 = g.edges[nxt[0]]
            tr2 = e2.trace if nxt[1] == 0 else e2.trace[::-1]
            tr2 = tr2[np.isfinite(tr2)]
            z_in, z_out = pts[-1][-1], tr2[0]
            a0, a1 = np.angle(z_in), np.angle(z_out)
            sweep = (a1 - a0) % (2 * np.pi)
            if sweep == 0 or (nxt == g.opposite(d)):
                sweep = 2 * np.pi if sweep == 0 else sweep
            t = np.linspace(0, 1, max(3, int(arc_samples * sweep / (2 * np.pi)) + 2))[1:-1]
            rad = np.abs(z_in) * (1 - t) + np.abs(z_out) * t
            pts.append(rad * np.exp(1j * (a0 + sweep * t)))
    poly = np.concatenate(pts)
    return poly


def winding_number(poly: np.ndarray, q: complex) -> float:
    rel = np.append(poly, poly[0]) - q
    with np.errstate(invalid="ignore", divide="ignore"):
        ang = np.angle(rel[1:] / rel[:-1])
    return float(np.nansum(ang) / (2 * np.pi))


def locate_face(g: PlanarGraph, z: complex, faces=None) -> int:
    """Index of the face containing the point ``z`` (off the graph)."""
    faces = faces if faces is not None else g.faces()
    if len(faces) == 1:
        return faces[0].id
    best, best_w = None, 0.0
    for f in faces:
        w = winding_number(face_polygon(g, f), z)
        if round(w) >= 1 and (best is None or w > best_w):
            best, best_w = f.id, w
    if best is None:
        # outer face: the one whose polygon has non-positive signed area
        for f in faces:
            poly = face_polygon(g, f)
            area = 0.5 * np.sum((np.conj(poly) * np.roll(poly, -1)).imag)
            if area <= 0:
                return f.id
        return faces[0].id
    return best


# ---------------------------------------------------------------------------
# graph maps


@dataclass
class GraphMap:
    """Map between embedded graphs.

    ``edge_map[e]`` is a path of oriented codomain edges ``(e', +1|-1)``; the
    map is an honest graph map when every path has length one.  ``func`` is an
    optional pointwise map used to place subdivision points during promotion.
    """

    domain: PlanarGraph
    codomain: PlanarGraph
    vertex_map: dict
    edge_map: dict
    func: object = None

    def is_weak(self) -> bool:
        return any(len(p) != 1 for p in self.edge_map.values())

    def dart_image(self, d: Dart) -> Dart:
        path = self.edge_map[d[0]]
        if d[1] == 0:
            e2, o = path[0]
            return (e2, 0 if o > 0 else 1)
        e2, o = path[-1]
        return (e2, 1 if o > 0 else 0)

    def check_edges(self) -> list[str]:
        """Endpoint consistency problems, empty when the map is well formed."""
        bad = []
        for e, path in self.edge_map.items():
            u, v = self.domain.edges[e].ends
            cur = self.vertex_map[u]
            for e2, o in path:
                a, b = self.codomain.edges[e2].ends
                if o < 0:
                    a, b = b, a
                if a != cur:
                    bad.append(e)
                    break
                cur = b
            else:
                if cur != self.vertex_map[v]:
                    bad.append(e)
        return bad

    def to_json(self) -> dict:
        return {
            "vertex_map": dict(self.vertex_map),
            "edge_map": {e: [[e2, int(o)] for e2, o in p] for e, p in self.edge_map.items()},
        }


def graph_map_from_json(domain, codomain, data) -> GraphMap:
    return GraphMap(
        domain,
        codomain,
        dict(data["vertex_map"]),
        {e: [(e2, int(o)) for e2, o in p] for e, p in data["edge_map"].items()},
    )


def dumps_bundle(graph: PlanarGraph, maps=()) -> str:
    data = graph.to_json()
    if maps:
        data["maps"] = [m.to_json() for m in maps]
    return json.dumps(data, sort_keys=True)


def promote_weak_map(f: GraphMap) -> GraphMap:
    """Subdivide domain edges so that every edge maps onto a single edge.

    Edge ``e`` with image path of length ``k`` becomes ``e~0 ... e~(k-1)``
    joined at new vertices ``e^1 ... e^(k-1)``.  Traces are split at samples,
    so the union of the traces is unchanged.
    """
    g = f.domain.copy()
    vmap = dict(f.vertex_map)
    emap = {}
    for eid, path in f.edge_map.items():
        for (a, oa), (b, ob) in zip(path, path[1:]):
            if a == b and oa == -ob:
                raise NonInjectiveOnEdge(f"edge {eid} folds back along {a}")
        if len(path) == 1:
            emap[eid] = list(path)
            continue
        e = g.edges.pop(eid)
        k = len(path)
        cuts = _split_indices(f, e, path)
        u, v = e.ends
        pieces = []
        prev = u
        for i in range(k):
            nid = f"{eid}~{i}"
            if i < k - 1:
                mid_codomain = f.codomain.edges[path[i][0]].ends[1 if path[i][1] > 0 else 0]
                mv = f"{eid}^{i + 1}"
                anchor = None
                if e.trace is not None:
                    anchor = complex(e.trace[cuts[i]])
                kind = f.codomain.vertices[mid_codomain].kind
                g.vertices[mv] = Vertex(mv, kind, anchor, {"subdivides": eid})
                g.rotations[mv] = []
                vmap[mv] = mid_codomain
                nxt = mv
            else:
                nxt = v
            tr = None
            if e.trace is not None:
                lo = 0 if i == 0 else cuts[i - 1]
                hi = len(e.trace) - 1 if i == k - 1 else cuts[i]
                tr = e.trace[lo : hi + 1]
            g.edges[nid] = Edge(nid, (prev, nxt), tr, e.etype, dict(e.data))
            pieces.append(nid)
            emap[nid] = [path[i]]
            prev = nxt
        g.rotations[u] = [(pieces[0], 0) if d == (eid, 0) else d for d in g.rotations[u]]
        g.rotations[v] = [(pieces[-1], 1) if d == (eid, 1) else d for d in g.rotations[v]]
        for i in range(k - 1):
            g.rotations[f"{eid}^{i + 1}"] = [(pieces[i], 1), (pieces[i + 1], 0)]
    return GraphMap(g, f.codomain, vmap, emap, f.func)


def _split_indices(f: GraphMap, e: Edge, path) -> list[int]:
    k = len(path)
    if e.trace is None:
        return []
    n = len(e.trace)
    if f.func is None or n < k + 1:
        return [int(round((i + 1) * (n - 1) / k)) for i in range(k - 1)]
    img = f.func(e.trace)
    cuts, lo = [], 1
    for i in range(k - 1):
        y = f.codomain.edges[path[i][0]].ends[1 if path[i][1] > 0 else 0]
        target = f.codomain.vertices[y].anchor
        hi = n - 1 - (k - 2 - i)
        seg = img[lo:hi]
        if target is None or f.codomain.vertices[y].kind == INFINITY:
            from .core import chordal

            dist = chordal(seg, np.inf)
        else:
            from .core import chordal

            dist = chordal(seg, target)
        j = lo + int(np.argmin(dist))
        cuts.append(j)
        lo = j + 1
    return cuts


# ---------------------------------------------------------------------------
# regular extension criterion


def corner_arcs(f: GraphMap):
    """Image arc of every domain corner, plus per-vertex sweep totals.

    Returns ``(arcs, totals)`` where ``arcs`` maps ``(vertex, a, b)`` to the
    list of codomain corner indices swept at ``f(vertex)``; codomain corner
    ``k`` lies between rotation positions ``k`` and ``k+1``.
    """
    dom, cod = f.domain, f.codomain
    pos = {}
    for y, rot in cod.rotations.items():
        for i, d in enumerate(rot):
            pos[d] = i
    arcs, totals = {}, {}
    for v, rot in dom.rotations.items():
        y = f.vertex_map[v]
        ny = cod.valence(y)
        if ny == 0:
            totals[v] = 0
            arcs[(v, None, None)] = []
            continue
        if not rot:
            arcs[(v, None, None)] = list(range(ny))
            totals[v] = ny
            continue
        tot = 0
        for i, a in enumerate(rot):
            b = rot[(i + 1) % len(rot)]
            ia, ib = pos[f.dart_image(a)], pos[f.dart_image(b)]
            length = (ib - ia) % ny
            if length == 0:
                length = ny
            arcs[(v, a, b)] = [(ia + t) % ny for t in range(length)]
            tot += length
        totals[v] = tot
    return arcs, totals


def check_regular_extension(f: GraphMap) -> ValidationReport:
    """Combinatorial test for a regular extension of an honest graph map.

    For each domain face ``U`` and codomain vertex ``y`` the sectors of ``U``
    at the preimages of ``y`` must map onto pairwise disjoint sectors at
    ``y``.  Local degrees are the sweep at each vertex divided by the valence
    of its image.
    """
    rep = ValidationReport("regular extension")
    bad_edges = f.check_edges()
    if bad_edges:
        rep.add("graph-map", False, f"edges with inconsistent endpoints: {bad_edges[:5]}")
        return rep
    if f.is_weak():
        rep.add("graph-map", False, "weak graph map; promote first")
        return rep
    rep.add("graph-map", True)
    arcs, totals = corner_arcs(f)
    degrees = {}
    sweep_ok = True
    for v, tot in totals.items():
        ny = f.codomain.valence(f.vertex_map[v])
        if ny == 0:
            degrees[v] = 1
            continue
        if tot % ny:
            sweep_ok = False
            rep.add(f"sweep {v}", False, f"sweep {tot} not a multiple of {ny}")
        degrees[v] = tot // ny
    rep.add("sweep", sweep_ok)
    corner_face = {}
    for face in f.domain.faces():
        for c in face.corners:
            corner_face[(c.vertex, c.a, c.b)] = face.id
    if not f.domain.edges:
        for v in f.domain.vertices:
            corner_face[(v, None, None)] = 0
    used = defaultdict(list)
    conflicts = []
    for key, arc in arcs.items():
        v = key[0]
        y = f.vertex_map[v]
        fid = corner_face.get(key, corner_face.get((v, key[1], key[1])))
        for k in arc:
            used[(fid, y, k)].append(key)
    for (fid, y, k), keys in used.items():
        if len(keys) > 1:
            conflicts.append((y, fid, k, keys))
    if conflicts:
        y, fid, k, keys = conflicts[0]
        rep.add("injective", False, f"face {fid} covers corner {k} at {y} {len(keys)} times via {[c[0] for c in keys]}")
    else:
        rep.add("injective", True)
    rep.data["local_degrees"] = degrees
    rep.data["conflicts"] = len(conflicts)
    return rep


def check_branched_extension(f: GraphMap) -> ValidationReport:
    """Test for an extension that is a branched cover with critical points off the graph.

    The codomain is restricted to the image graph ``H``.  Every domain corner
    must map to a single corner of ``H``, the boundary of every domain face
    must cover the boundary of one face of ``H`` some number of times, and
    the covering degrees over each face of ``H`` must sum to the same total.
    Faces of a connected plane graph are discs, so boundary coverings extend
    to branched covers of the faces.
    """
    rep = ValidationReport("branched extension")
    if f.check_edges() or f.is_weak():
        rep.add("graph-map", False, "not an honest graph map")
        return rep
    rep.add("graph-map", True)
    image_edges = {p[0][0] for p in f.edge_map.values()}
    H = f.codomain.subgraph(image_edges)
    if not H.is_connected():
        rep.add("image", False, "image graph disconnected")
        return rep
    sub = GraphMap(f.domain, H, f.vertex_map, f.edge_map)
    arcs, _ = corner_arcs(sub)
    wide = [k for k, arc in arcs.items() if len(arc) != 1 and k[1] is not None]
    rep.add("corners", not wide, f"corners spanning several image corners: {[k[0] for k in wide[:4]]}" if wide else "")
    if wide:
        return rep
    hfaces = H.faces()
    hcorner_face, hcycle = {}, {}
    for hf in hfaces:
        hcycle[hf.id] = [tuple(d) for d in hf.darts]
        for c in hf.corners:
            hcorner_face[(c.vertex, c.a)] = hf.id
    cover = defaultdict(int)
    bad = []
    for face in f.domain.faces():
        img = [tuple(f.dart_image(d)) for d in face.darts]
        targets = {hcorner_face.get((f.vertex_map[c.vertex], tuple(f.dart_image(c.a)))) for c in face.corners}
        if len(targets) != 1 or None in targets:
            bad.append(f"face {face.id} meets {len(targets)} image faces")
            continue
        (t,) = targets
        cyc = hcycle[t]
        if len(img) % len(cyc):
            bad.append(f"face {face.id} boundary length {len(img)} vs {len(cyc)}")
            continue
        m = len(img) // len(cyc)
        i0 = cyc.index(img[0]) if img[0] in cyc else None
        if i0 is None or any(img[j] != cyc[(i0 + j) % len(cyc)] for j in range(len(img))):
            bad.append(f"face {face.id} boundary does not cover its image face")
            continue
        cover[t] += m
    rep.add("faces", not bad, "; ".join(bad[:3]))
    degs = {cover.get(hf.id, 0) for hf in hfaces}
    rep.add("degree", not bad and len(degs) == 1 and 0 not in degs, f"covering degrees {sorted(degs)}")
    rep.data["degree"] = max(degs) if degs else 0
    return rep


def local_degrees(f: GraphMap) -> dict:
    _, totals = corner_arcs(f)
    out = {}
    for v, tot in totals.items():
        ny = f.codomain.valence(f.vertex_map[v])
        out[v] = 1 if ny == 0 else tot // ny
    return out


# ---------------------------------------------------------------------------
# abstract channel diagrams and Newton graphs


def validate_abstract_channel_diagram(g: PlanarGraph, d: int) -> ValidationReport:
    rep = ValidationReport("abstract channel diagram")
    inf = g.infinity()
    if inf is None:
        rep.add("vinf", False, "no vertex of kind infinity")
        return rep
    finite = [v for v in g.vertices if v != inf]
    if len(finite) != d:
        rep.add("vertices", False, f"{len(finite)} finite vertices for degree {d}")
    l = len(g.edges)
    rep.add(1, l <= 2 * d - 2, f"{l} edges, bound {2 * d - 2}")
    joins = [e.id for e in g.edges.values() if not (inf in e.ends and e.ends[0] != e.ends[1])]
    rep.add(2, not joins, f"edges not joining infinity to a finite vertex: {joins}" if joins else "")
    lonely = [v for v in finite if g.valence(v) == 0]
    rep.add(3, not lonely, f"vertices without edges: {lonely}" if lonely else "")
    if joins:
        rep.add(4, INDETERMINATE, "needs (2)")
        return rep
    target = {e.id: (e.ends[1] if e.ends[0] == inf else e.ends[0]) for e in g.edges.values()}
    rot = g.rotations[inf]
    problems = []
    by_vertex = defaultdict(list)
    for e, v in target.items():
        by_vertex[v].append(e)
    for v, es in by_vertex.items():
        for i in range(len(es)):
            for j in range(i + 1, len(es)):
                di = [k for k, dd in enumerate(rot) if dd[0] == es[i]][0]
                dj = [k for k, dd in enumerate(rot) if dd[0] == es[j]][0]
                n = len(rot)
                side1 = [rot[(di + t) % n][0] for t in range(1, (dj - di) % n)]
                side2 = [rot[(dj + t) % n][0] for t in range(1, (di - dj) % n)]
                for side in (side1, side2):
                    if not any(target[e] != v for e in side):
                        problems.append((es[i], es[j]))
                        break
    rep.add(4, not problems, f"parallel pair with an empty side: {problems[0]}" if problems else "")
    return rep


def _iterate_edges(f: GraphMap, eid: str, n: int):
    cur = [eid]
    for _ in range(n):
        nxt = []
        for e in cur:
            nxt.extend(e2 for e2, _ in f.edge_map[e])
        cur = nxt
    return cur


def validate_abstract_newton_graph(g: PlanarGraph, f: GraphMap, level: int, delta_edges) -> ValidationReport:
    """Check the abstract Newton graph conditions on ``(g, f)``.

    ``delta_edges`` names the edges of the channel diagram inside ``g``.
    When the only obstruction to a regular extension is face injectivity the
    extension condition is reported indeterminate, since the axioms allow
    non-regular extensions with critical points off the graph.
    """
    rep = ValidationReport(f"abstract Newton graph (level {level})")
    delta_edges = set(delta_edges)
    delta = g.subgraph(delta_edges)
    inf = g.infinity()
    d = len(delta.vertices) - 1
    ch = validate_abstract_channel_diagram(delta, d)
    fixes = all(f.edge_map.get(e) == [(e, 1)] for e in delta_edges) and all(
        f.vertex_map[v] == v for v in delta.vertices
    )
    proper = len(delta_edges) < len(g.edges)
    ok1 = ch.verdict and fixes and proper and d >= 3
    wit = [] if ch.verdict else [str(ch.first_failure().cid)]
    if not fixes:
        wit.append("not fixed pointwise")
    if not proper:
        wit.append("channel diagram is all of the graph")
    rep.add(1, ok1, "; ".join(wit))

    fp = promote_weak_map(f) if f.is_weak() else f
    ext = check_regular_extension(fp)
    degrees = ext.data.get("local_degrees", {})
    if ext.verdict:
        rep.add(2, PASS, "regular extension exists")
    elif ext.status("graph-map") == FAIL or ext.status("sweep") == FAIL:
        rep.add(2, FAIL, ext.first_failure().witness)
    else:
        br = check_branched_extension(fp)
        if br.verdict:
            rep.add(2, PASS, f"branched extension of degree {br.data['degree']} with critical points off the graph")
        else:
            rep.add(2, INDETERMINATE, "no regular extension; " + br.first_failure().witness)

    # (3) saturation: g is the Delta-component of the level-fold pullback
    if degrees:
        into = all(set(_iterate_edges(fp, e, level)) <= delta_edges for e in fp.domain.edges)
        sat_bad = []
        for v in g.vertices:
            deg, w = 1, v
            for _ in range(level):
                deg *= degrees.get(w, 1)
                w = f.vertex_map[w]
            if g.valence(v) != deg * delta.valence(w):
                sat_bad.append(v)
        ok3 = into and not sat_bad and g.is_connected()
        wit = []
        if not into:
            wit.append(f"edges not mapped into the channel diagram after {level} steps")
        if sat_bad:
            wit.append(f"unsaturated vertices {sat_bad[:4]}")
        rep.add(3, ok3, "; ".join(wit))
    else:
        rep.add(3, INDETERMINATE, "no local degrees")

    # (4) finite channel vertices touch the rest of the graph, infinity does not
    rest = [e for e in g.edges if e not in delta_edges]
    rest_vertices = {v for e in rest for v in g.edges[e].ends}
    bad4 = []
    if inf in rest_vertices:
        bad4.append("infinity meets edges outside the channel diagram")
    for v in delta.vertices:
        if v == inf:
            continue
        if v not in rest_vertices:
            bad4.append(f"{v} has no edge outside the channel diagram")
        k = sum(1 for e in delta_edges if set(g.edges[e].ends) == {v, inf})
        if k != degrees.get(v, 0) - 1 or k < 1:
            bad4.append(f"{v}: {k} channel edges, local degree {degrees.get(v)}")
    rep.add(4, not bad4, "; ".join(bad4))

    total = sum(k - 1 for k in degrees.values())
    rep.add(5, total <= 2 * d - 2, f"sum of (deg-1) = {total}, bound {2 * d - 2}")
    closure = g.subgraph(rest)
    rep.add(6, bool(rest) and closure.is_connected(), "" if closure.is_connected() else "closure of complement disconnected")
    rep.data["local_degrees"] = degrees
    rep.data["degree"] = d
    return rep


# ---------------------------------------------------------------------------
# canonical forms


def canonical_code(g: PlanarGraph, root: str | None = None, labels=None) -> tuple:
    """Orientation-preserving canonical code of a connected embedded graph.

    Breadth-first relabelling from every dart at ``root`` (default: the vertex
    at infinity, else all vertices), keeping the lexicographically smallest
    code.  ``labels`` optionally maps vertices and edges to extra tags that
    must be preserved (kinds and edge types are always included).
    """
    labels = labels or {}
    roots = [root] if root is not None else ([g.infinity()] if g.infinity() else list(g.vertices))
    best = None
    for r in roots:
        starts = g.rotations[r] or [None]
        for s in starts:
            code = _bfs_code(g, r, s, labels)
            if best is None or code < best:
                best = code
    return best


def _bfs_code(g, root, start, labels):
    order = {root: 0}
    queue = deque([(root, start)])
    code = []
    edge_seen = {}
    while queue:
        v, first = queue.popleft()
        rot = g.rotations[v]
        if first is not None and rot:
            i0 = rot.index(first)
            rot = rot[i0:] + rot[:i0]
        vert = g.vertices[v]
        code.append(("v", order[v], vert.kind, str(labels.get(v, "")), len(rot)))
        for d in rot:
            back = g.opposite(d)
            w = g.dart_vertex(back)
            if w not in order:
                order[w] = len(order)
                queue.append((w, back))
            e = g.edges[d[0]]
            if d[0] not in edge_seen:
                edge_seen[d[0]] = len(edge_seen)
            code.append(("d", order[w], edge_seen[d[0]], str(e.etype), str(labels.get(d[0], ""))))
    return tuple(code)
