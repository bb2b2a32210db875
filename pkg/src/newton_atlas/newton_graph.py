"""Newton graphs: components of iterated preimages of the channel diagram."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .basins import channel_diagram
from .core import chordal, critical_points
from .errors import BranchJumpDetected, NotCoveredWithinBudget
from .planar import (
    FATOU,
    INFINITY,
    JULIA,
    GraphMap,
    PlanarGraph,
    canonical_code,
    face_polygon,
    set_rotations_from_geometry,
    winding_number,
)
from .pullback import preimage_curves

BIG = 1e5  # curve endpoints beyond this radius belong to the vertex at infinity
SNAP_TOL = 1e-5
VERTEX_TOL = 1e-7


@dataclass
class Curve:
    id: str
    parent: str
    start: str
    end: str
    trace: np.ndarray


@dataclass
class NewtonGraphLevel:
    level: int
    graph: PlanarGraph
    to_parent: GraphMap | None = None  # Delta_n -> Delta_{n-1}
    delta_edges: frozenset = field(default_factory=frozenset)

    def self_map(self) -> GraphMap:
        """The Newton map as a graph map of this level into itself."""
        if self.to_parent is None:
            ident = {e: [(e, 1)] for e in self.graph.edges}
            return GraphMap(self.graph, self.graph, {v: v for v in self.graph.vertices}, ident)
        f = self.to_parent
        return GraphMap(self.graph, self.graph, dict(f.vertex_map), dict(f.edge_map), f.func)


class NewtonGraphBuilder:
    """Computes the levels Delta_0 = Delta, Delta_1, ... of a Newton map.

    Inverse images of every edge are computed once and cached, so each level
    only pulls back the edges that appeared at the previous level.
    """

    def __init__(self, nmap, channel: PlanarGraph | None = None):
        self.nmap = nmap
        g0 = channel if channel is not None else channel_diagram(nmap)
        g0.meta["level"] = 0
        self.vertices: dict[str, tuple] = {}  # id -> (anchor, kind)
        self._grid = defaultdict(list)
        for v in g0.vertices.values():
            self._add_vertex(v.id, v.anchor, v.kind)
        self.edges: dict[str, Curve] = {}
        for e in g0.edges.values():
            self.edges[e.id] = Curve(e.id, e.id, e.ends[0], e.ends[1], e.trace)
        self.children: dict[str, list[str]] = {}
        self.levels = [NewtonGraphLevel(0, g0, None, frozenset(g0.edges))]

    # -- vertices -------------------------------------------------------------

    def _add_vertex(self, vid, z, kind):
        self.vertices[vid] = (None if z is None else complex(z), kind)
        if z is not None:
            self._grid[_cell(z)].append(vid)

    def _find_vertex(self, z) -> str | None:
        if not np.isfinite(z):
            return "inf"
        cx, cy = _cell(z)
        best, bd = None, np.inf
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for vid in self._grid.get((cx + dx, cy + dy), ()):
                    d = abs(self.vertices[vid][0] - z)
                    if d < bd:
                        best, bd = vid, d
        if best is not None and bd < VERTEX_TOL * (1 + abs(z)):
            return best
        return None

    # -- pullback of one edge -------------------------------------------------

    def _pull_edge(self, eid: str, new_vertices: list):
        """All inverse images of edge ``eid`` as curves (vertex ids may be provisional)."""
        cur = self.edges[eid]
        u_anchor = self.vertices[cur.start][0]
        v_anchor = self.vertices[cur.end][0]
        w = _trim_ends(cur.trace, u_anchor, v_anchor)
        wr, Z = preimage_curves(self.nmap, w, skip_ends=True)
        start_pts = self._exact(u_anchor)
        end_pts = self._exact(v_anchor)
        curves = []
        for j in range(Z.shape[1]):
            col = Z[:, j].copy()
            s = start_pts[np.argmin(np.abs(start_pts - col[0]))]
            if abs(s - col[0]) > SNAP_TOL * (1 + abs(s)):
                raise BranchJumpDetected(f"edge {eid}: start of branch {j} is {abs(s - col[0]):.2e} from a vertex preimage")
            col[0] = s
            if v_anchor is None:
                last = col[-1]
                if abs(last) > BIG:
                    e_pt = complex("inf")
                else:
                    fin = end_pts[np.isfinite(end_pts)]
                    e_pt = fin[np.argmin(np.abs(fin - last))]
                    if abs(e_pt - last) > 1e-3:
                        raise BranchJumpDetected(f"edge {eid}: branch {j} does not end near a pole")
                    col = np.append(col, e_pt)
            else:
                e_pt = end_pts[np.argmin(np.abs(end_pts - col[-1]))]
                if abs(e_pt - col[-1]) > SNAP_TOL * (1 + abs(e_pt)):
                    raise BranchJumpDetected(f"edge {eid}: end of branch {j} is off the vertex preimages")
                col[-1] = e_pt
            curves.append((s, e_pt, col))
        return curves

    def _exact(self, anchor):
        pts = self.nmap.vertex_preimages(complex("inf") if anchor is None else anchor)
        return np.array([p for p, _ in pts], dtype=complex)

    def _kind_of_preimage(self, parent_vertex: str) -> str:
        kind = self.vertices[parent_vertex][1]
        return FATOU if kind == FATOU else JULIA

    # -- levels ---------------------------------------------------------------

    def level(self, n: int) -> NewtonGraphLevel:
        while len(self.levels) <= n:
            self._next_level()
        return self.levels[n]

    def _next_level(self):
        prev = self.levels[-1]
        n = prev.level + 1
        pending = [e for e in sorted(prev.graph.edges) if e not in self.children]
        raw = {}
        for eid in pending:
            raw[eid] = self._pull_edge(eid, [])
        # register new vertices deterministically
        fresh = {}
        for eid, curves in raw.items():
            cur = self.edges[eid]
            for s, e_pt, _ in curves:
                for z, parent_v in ((s, cur.start), (e_pt, cur.end)):
                    if self._find_vertex(z) is None:
                        key = (round(z.real, 9), round(z.imag, 9))
                        fresh.setdefault(key, (z, self._kind_of_preimage(parent_v)))
        order = sorted(fresh.values(), key=lambda t: (t[1], round(t[0].real, 9), round(t[0].imag, 9)))
        counters = defaultdict(int)
        for z, kind in order:
            if self._find_vertex(z) is not None:
                continue
            tag = "f" if kind == FATOU else "j"
            vid = f"{tag}{n}.{counters[tag]}"
            counters[tag] += 1
            self._add_vertex(vid, z, kind)
        # register curves
        for eid, curves in raw.items():
            items = []
            for s, e_pt, col in curves:
                a, b = self._find_vertex(s), self._find_vertex(e_pt)
                items.append((a, b, col))
            items.sort(key=lambda t: (t[0], t[1], round(t[2][len(t[2]) // 2].real, 9), round(t[2][len(t[2]) // 2].imag, 9)))
            kids = []
            k = 0
            for a, b, col in items:
                same = self._coincides(eid, a, b, col)
                if same is not None:
                    kids.append(same)
                    continue
                cid = f"{eid}/{k}"
                k += 1
                self.edges[cid] = Curve(cid, eid, a, b, col)
                kids.append(cid)
            self.children[eid] = kids
        self.levels.append(self._assemble(n, prev))

    def _coincides(self, parent: str, a: str, b: str, col) -> str | None:
        cur = self.edges[parent]
        if (cur.start, cur.end) != (a, b) or self.edges[parent].parent != parent:
            return None
        mid = col[len(col) // 2]
        if np.min(chordal(cur.trace, mid)) < 1e-6:
            return parent
        return None

    def _assemble(self, n: int, prev: NewtonGraphLevel) -> NewtonGraphLevel:
        # full preimage of Delta_{n-1}
        edge_ids = [c for e in sorted(prev.graph.edges) for c in self.children[e]]
        adj = defaultdict(set)
        for cid in edge_ids:
            c = self.edges[cid]
            adj[c.start].add(c.end)
            adj[c.end].add(c.start)
        seen = {"inf"}
        stack = ["inf"]
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        keep = [cid for cid in edge_ids if self.edges[cid].start in seen]
        g = PlanarGraph({"kind": "newton-graph", "level": n})
        for vid in sorted(seen, key=_vertex_sort_key):
            anchor, kind = self.vertices[vid]
            g.add_vertex(vid, kind=kind, anchor=anchor)
        for cid in sorted(set(keep)):
            c = self.edges[cid]
            g.add_edge(cid, c.start, c.end, trace=c.trace, etype="N", level=_edge_level(cid))
        set_rotations_from_geometry(g)
        vmap = {}
        for cid in keep:
            c = self.edges[cid]
            par = self.edges[c.parent]
            vmap[c.start] = par.start
            vmap[c.end] = par.end
        for v in g.vertices:
            vmap.setdefault(v, v)
        emap = {cid: [(self.edges[cid].parent, 1)] for cid in g.edges}
        f = GraphMap(g, prev.graph, vmap, emap, self.nmap)
        return NewtonGraphLevel(n, g, f, self.levels[0].delta_edges)

    def full_preimage(self, n: int, m: int = 1) -> PlanarGraph:
        """All of ``N^{-m}(Delta_n)`` as an embedded graph (no component restriction)."""
        ids = set(self.level(n).graph.edges)
        for _ in range(m):
            for e in sorted(ids):
                if e not in self.children:
                    self._extend_children([e])
            ids = {c for e in ids for c in self.children[e]}
        g = PlanarGraph({"kind": "full-preimage", "level": n, "depth": m})
        verts = set()
        for cid in ids:
            verts.update((self.edges[cid].start, self.edges[cid].end))
        for vid in sorted(verts, key=_vertex_sort_key):
            anchor, kind = self.vertices[vid]
            g.add_vertex(vid, kind=kind, anchor=anchor)
        for cid in sorted(ids):
            c = self.edges[cid]
            g.add_edge(cid, c.start, c.end, trace=c.trace, etype="N")
        set_rotations_from_geometry(g)
        return g

    def _extend_children(self, eids):
        """Pull back edges that are not yet part of any computed level."""
        n = max(self.levels[-1].level + 1, 1)
        raw = {e: self._pull_edge(e, []) for e in eids}
        for eid, curves in raw.items():
            cur = self.edges[eid]
            for s, e_pt, _ in curves:
                for z, parent_v in ((s, cur.start), (e_pt, cur.end)):
                    if self._find_vertex(z) is None:
                        kind = self._kind_of_preimage(parent_v)
                        tag = "f" if kind == FATOU else "j"
                        k = sum(1 for v in self.vertices if v.startswith(f"{tag}x"))
                        self._add_vertex(f"{tag}x{n}.{k}", z, kind)
            items = [(self._find_vertex(s), self._find_vertex(e_pt), col) for s, e_pt, col in curves]
            items.sort(key=lambda t: (t[0], t[1], round(t[2][len(t[2]) // 2].real, 9)))
            kids, k = [], 0
            for a, b, col in items:
                same = self._coincides(eid, a, b, col)
                if same is not None:
                    kids.append(same)
                    continue
                cid = f"{eid}/{k}"
                k += 1
                self.edges[cid] = Curve(cid, eid, a, b, col)
                kids.append(cid)
            self.children[eid] = kids


def _cell(z, size: float = 1e-4):
    return (int(np.floor(z.real / size)), int(np.floor(z.imag / size)))


def _trim_ends(w, u, v, tol: float = 1e-4):
    """Drop interior samples crowding the endpoints; the ends themselves are kept."""
    w = np.asarray(w, dtype=complex)
    keep = np.ones(len(w), dtype=bool)
    for anchor in (u, v):
        a = complex("inf") if anchor is None else anchor
        keep[1:-1] &= chordal(w[1:-1], a) > tol
    return w[keep]


def _vertex_sort_key(v: str):
    return (v != "inf", not v.startswith("r"), v)


def _edge_level(cid: str) -> int:
    return cid.count("/")


def build_levels(nmap, max_level: int, channel: PlanarGraph | None = None) -> NewtonGraphBuilder:
    b = NewtonGraphBuilder(nmap, channel)
    b.level(max_level)
    return b


def pull_back_level(nmap, level: NewtonGraphLevel, builder: NewtonGraphBuilder | None = None) -> NewtonGraphLevel:
    """The next level after ``level``."""
    if builder is None:
        builder = NewtonGraphBuilder(nmap, level.graph if level.level == 0 else None)
    return builder.level(level.level + 1)


# ---------------------------------------------------------------------------
# pole coverage and level selection


@dataclass
class PoleCoverage:
    poles: np.ndarray
    first_level: list
    level: int


def point_on_graph(g: PlanarGraph, z: complex, tol: float = 1e-6) -> bool:
    for v in g.vertices.values():
        if v.anchor is not None and abs(v.anchor - z) < tol:
            return True
    for e in g.edges.values():
        if e.trace is not None and _dist_to_polyline(e.trace, z) < tol:
            return True
    return False


def _dist_to_polyline(tr, z):
    tr = tr[np.isfinite(tr)]
    if tr.size == 1:
        return abs(tr[0] - z)
    a, b = tr[:-1], tr[1:]
    ab = b - a
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.clip(((z - a) * np.conj(ab)).real / np.abs(ab) ** 2, 0, 1)
    t = np.where(np.isfinite(t), t, 0)
    return float(np.min(np.abs(a + t * ab - z)))


def poles_covered_level(nmap, max_level: int, builder: NewtonGraphBuilder | None = None) -> PoleCoverage:
    """Smallest level whose Newton graph contains every pole."""
    if max_level < 1:
        raise NotCoveredWithinBudget("max_level must be at least 1")
    builder = builder or NewtonGraphBuilder(nmap)
    poles = nmap.poles()
    first = [None] * len(poles)
    for n in range(1, max_level + 1):
        g = builder.level(n).graph
        for i, q in enumerate(poles):
            if first[i] is None and point_on_graph(g, q):
                first[i] = n
        if all(f is not None for f in first):
            return PoleCoverage(poles, first, max(first))
    raise NotCoveredWithinBudget(f"poles not all on the Newton graph up to level {max_level}")


def face_index(g: PlanarGraph, faces, z: complex) -> int:
    """Face containing ``z``; faces are tested by winding number of their boundary."""
    best, best_area = None, np.inf
    for f in faces:
        poly = face_polygon(g, f)
        w = winding_number(poly, z)
        if round(w) != 0:
            area = abs(0.5 * np.sum((np.conj(poly) * np.roll(poly, -1)).imag))
            if area < best_area:
                best, best_area = f.id, area
    return best


def eventually_fixed_critical_points(nmap, depth: int = 60):
    """Free critical points whose orbit lands exactly on a root or on infinity.

    Landing is told apart from ordinary attraction by the jump: the step
    before reaching a root must still be far outside the quadratic regime.
    """
    out = []
    crit = critical_points(nmap)
    for c in crit.free:
        z, prev = complex(c), np.inf
        for _ in range(depth):
            gap = np.min(np.abs(nmap.roots - z))
            if not abs(z) < 1e12 or (gap < 1e-9 and prev > 1e-3):
                out.append(complex(c))
                break
            if gap < 1e-9:  # plain convergence inside the basin
                break
            prev = gap
            z = complex(nmap(z))
    return out


def abstract_level(nmap, builder: NewtonGraphBuilder | None = None, max_level: int = 6) -> int:
    """Minimal level at which the Newton graph with N passes the abstract axioms."""
    from .planar import validate_abstract_newton_graph

    builder = builder or NewtonGraphBuilder(nmap)
    for n in range(1, max_level + 1):
        lev = builder.level(n)
        if validate_abstract_newton_graph(lev.graph, lev.self_map(), n, lev.delta_edges).verdict:
            return n
    raise NotCoveredWithinBudget(f"no level up to {max_level} is an abstract Newton graph")


def select_level(nmap, anchors, builder: NewtonGraphBuilder | None = None, max_level: int = 6, start: int | None = None):
    """Minimal level separating the trees and containing eventually fixed critical points.

    ``anchors`` holds one point per periodic extended Hubbard tree.  The
    search starts at the minimal abstract Newton graph level, which bounds
    the answer from below.  Returns ``(level, report)``.
    """
    builder = builder or NewtonGraphBuilder(nmap)
    if start is None:
        start = abstract_level(nmap, builder, max_level)
    ev = eventually_fixed_critical_points(nmap)
    info = {"abstract_level": start}
    for n in range(start, max_level + 1):
        g = builder.level(n).graph
        faces = g.faces()
        idx = [face_index(g, faces, a) for a in anchors]
        separated = len(set(idx)) == len(idx)
        covered = all(point_on_graph(g, c) for c in ev)
        info[n] = {"faces": idx, "separated": separated, "critical_on_graph": covered}
        if separated and covered:
            return n, info
    raise NotCoveredWithinBudget(f"no level up to {max_level} separates the trees")


# ---------------------------------------------------------------------------
# consistency checks


def graphs_isomorphic(g1: PlanarGraph, g2: PlanarGraph, anchor_tol: float = 1e-5):
    """Embedded-graph isomorphism fixing infinity, with anchors compared after matching."""
    if len(g1.vertices) != len(g2.vertices) or len(g1.edges) != len(g2.edges):
        return False, "different sizes"
    if canonical_code(g1) != canonical_code(g2):
        return False, "different canonical codes"
    for v in g1.vertices.values():
        if v.anchor is None:
            continue
        d = min(abs(v.anchor - w.anchor) for w in g2.vertices.values() if w.anchor is not None)
        if d > anchor_tol:
            return False, f"vertex {v.id} has no partner within {anchor_tol}"
    return True, ""


def check_pullback_consistency(builder: NewtonGraphBuilder, m: int, k: int):
    """Compare the full m-fold preimage of Delta_k with Delta_{m+k}."""
    full = builder.full_preimage(k, m)
    target = builder.level(m + k).graph
    ok, why = graphs_isomorphic(full, target)
    return ok, why
