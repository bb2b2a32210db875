"""Predecessor bubbles, bubble rays and periodic Newton rays.

Rays are assembled from edges of deeper and deeper Newton graph levels.  A
fundamental segment ``S_0`` runs inside one face of ``Delta_N`` from a vertex
of ``Delta_N`` to one of its ``N^m``-preimages; the ray is the union of the
successive lifts ``S_{k+1} = h(S_k)`` along the inverse branch of ``N^m``
that continues the chain.  Every lift maps sample by sample onto the
previous segment, so forward images can be compared with the ray exactly.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    BranchJumpDetected,
    CenterNotInTree,
    DegenerateTreeNoOrder,
    SearchBudgetExceeded,
    SeparationViolated,
)
from .planar import FATOU, PlanarGraph
from .pullback import preimage_curves
from .renormalization import FaceLocator, iterate_with_derivative
from .report import FAIL, PASS, ValidationReport

TRUNCATE = 1e-9  # stop lifting once a fundamental segment is this small
HAUSDORFF_TOL = 1e-5


# ---------------------------------------------------------------------------
# distances to polylines


class PolylineIndex:
    """Nearest-distance queries against a set of polylines on the sphere.

    Distances are Euclidean for points with ``|z| <= clip`` and measured in
    the chart ``1/z`` beyond, so curves running out to infinity are handled.
    Values above ``cap`` are reported as ``cap``.
    """

    def __init__(self, polylines, cap: float = 1e-3, clip: float = 10.0):
        self.cap = cap
        self.clip = clip
        near, far = [], []
        for p in polylines:
            p = np.asarray(p, dtype=complex)
            fin = p[np.isfinite(p)]
            if fin.size:
                near.append(fin)
            with np.errstate(divide="ignore", invalid="ignore"):
                w = np.where(np.isfinite(p), 1 / p, 0)
            far.append(w)
        self._near = _SegmentIndex(near, cap, clip)
        self._far = _SegmentIndex(far, cap, 2 / clip)

    def distance(self, pts) -> np.ndarray:
        pts = np.atleast_1d(np.asarray(pts, dtype=complex))
        out = np.full(pts.shape, self.cap)
        inner = np.isfinite(pts) & (np.abs(pts) <= self.clip)
        if inner.any():
            out[inner] = self._near.distance(pts[inner])
        outer = ~inner
        if outer.any():
            with np.errstate(divide="ignore", invalid="ignore"):
                w = np.where(np.isfinite(pts[outer]), 1 / pts[outer], 0)
            out[outer] = self._far.distance(w)
        return out


class _SegmentIndex:
    def __init__(self, polylines, cap, radius):
        self.cap = cap
        step = 5 * cap
        A, B = [], []
        for p in polylines:
            if p.size == 1:
                p = np.array([p[0], p[0]])
            a, b = p[:-1], p[1:]
            a, b = _clip_segments(a, b, radius)
            if not a.size:
                continue
            n = np.maximum(1, np.ceil(np.abs(b - a) / step).astype(int))
            idx = np.repeat(np.arange(a.size), n)
            t0 = np.concatenate([np.arange(k) / k for k in n])
            t1 = np.concatenate([np.arange(1, k + 1) / k for k in n])
            A.append(a[idx] + t0 * (b[idx] - a[idx]))
            B.append(a[idx] + t1 * (b[idx] - a[idx]))
        if A:
            self.a = np.concatenate(A)
            self.b = np.concatenate(B)
            mid = 0.5 * (self.a + self.b)
            self.tree = cKDTree(np.column_stack([mid.real, mid.imag]))
            self.reach = cap + 0.5 * float(np.max(np.abs(self.b - self.a)))
        else:
            self.tree = None

    def distance(self, pts):
        out = np.full(pts.shape, self.cap)
        if self.tree is None or not pts.size:
            return out
        k = min(8, self.a.size)
        _, nb = self.tree.query(np.column_stack([pts.real, pts.imag]), k=k, distance_upper_bound=self.reach)
        nb = np.asarray(nb).reshape(pts.size, k)
        valid = nb < self.a.size
        nb = np.where(valid, nb, 0)
        a, b = self.a[nb], self.b[nb]
        ab = b - a
        den = np.abs(ab) ** 2
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.clip(np.where(den > 0, ((pts[:, None] - a) * np.conj(ab)).real / den, 0), 0, 1)
        d = np.abs(pts[:, None] - (a + t * ab))
        d = np.where(valid, d, np.inf)
        return np.minimum(d.min(axis=1), self.cap)


def _clip_segments(a, b, radius):
    """Keep the parts of segments inside the disk ``|z| <= radius``."""
    ia, ib = np.abs(a) <= radius, np.abs(b) <= radius
    keep = ia | ib
    a, b, ia, ib = a[keep], b[keep], ia[keep], ib[keep]
    a, b = a.copy(), b.copy()
    for mask, inside, outside in ((~ib, a, b), (~ia, b, a)):
        if not mask.any():
            continue
        p, q = inside[mask], outside[mask]
        d = q - p
        A = np.abs(d) ** 2
        Bc = 2 * (p * np.conj(d)).real
        C = np.abs(p) ** 2 - radius**2
        t = (-Bc + np.sqrt(np.maximum(Bc**2 - 4 * A * C, 0))) / (2 * A)
        outside[mask] = p + t * d
    return a, b


def hausdorff_to_polyline(pts, polylines, cap: float = 1e-3) -> float:
    """One-sided distance ``max_p dist(p, union of polylines)`` capped at ``cap``."""
    idx = PolylineIndex(polylines, cap)
    return float(np.max(idx.distance(pts))) if len(pts) else 0.0


# ---------------------------------------------------------------------------
# spanning trees and predecessors


@dataclass
class SpanningTreeFamily:
    """Nested maximal subtrees ``T_0 ⊆ T_1 ⊆ ...`` of the Newton graph levels."""

    levels: list
    trees: list  # frozensets of edge ids
    vertices: list  # frozensets of vertex ids
    parent: dict  # vertex -> neighbour on the tree path to infinity
    bad: frozenset = frozenset()
    bad_level: int = 0
    bad_info: dict = field(default_factory=dict)
    builder: object = field(default=None, repr=False)

    def tree_graph(self, i: int = -1) -> PlanarGraph:
        g = self.levels[i].graph
        return g.subgraph(self.trees[i])

    def level_of(self, v: str):
        for i, vs in enumerate(self.vertices):
            if v in vs:
                return i
        return None

    def path_to_infinity(self, v: str) -> list:
        if v not in self.parent and v != "inf":
            raise CenterNotInTree(f"{v} is not in T_{len(self.trees) - 1}; build more levels")
        path = [v]
        while path[-1] != "inf":
            path.append(self.parent[path[-1]])
        return path

    def is_root(self, v: str) -> bool:
        return v in self.levels[0].graph.vertices and v != "inf"


def _grow_tree(g: PlanarGraph, candidates, edges, verts):
    """Grow ``edges`` to a maximal subtree of the candidate subgraph, smallest edge id first."""
    edges, verts = set(edges), set(verts)
    inc = {}
    for e in candidates:
        for v in g.edges[e].ends:
            inc.setdefault(v, []).append(e)
    heap = []
    for v in verts:
        for e in inc.get(v, ()):
            heapq.heappush(heap, e)
    while heap:
        e = heapq.heappop(heap)
        if e in edges:
            continue
        u, w = g.edges[e].ends
        if (u in verts) == (w in verts):
            continue
        new = w if u in verts else u
        edges.add(e)
        verts.add(new)
        for e2 in inc.get(new, ()):
            if e2 not in edges:
                heapq.heappush(heap, e2)
    return edges, verts


def build_spanning_trees(levels, nmap=None, builder=None) -> SpanningTreeFamily:
    """Choose ``T_i`` as the maximal subtree of ``N^-1(T_{i-1}) ∩ Delta_i`` containing ``T_{i-1}``.

    Edges are added greedily in increasing id order, which makes the choice
    deterministic.  With ``nmap`` the bad vertex set of the deepest tree is
    computed as well.
    """
    trees, verts = [], []
    for lv in levels:
        g = lv.graph
        if not trees:
            cand = sorted(g.edges)
            E, V = _grow_tree(g, cand, set(), {g.infinity()})
        else:
            prev = trees[-1]
            emap = lv.to_parent.edge_map
            cand = sorted(e for e in g.edges if all(p in prev for p, _ in emap[e]))
            E, V = _grow_tree(g, cand, prev, verts[-1])
        trees.append(frozenset(E))
        verts.append(frozenset(V))
    parent = {}
    g = levels[-1].graph
    adj = {}
    for e in trees[-1]:
        u, w = g.edges[e].ends
        adj.setdefault(u, []).append(w)
        adj.setdefault(w, []).append(u)
    queue = deque(["inf"])
    seen = {"inf"}
    while queue:
        v = queue.popleft()
        for w in sorted(adj.get(v, ())):
            if w not in seen:
                seen.add(w)
                parent[w] = v
                queue.append(w)
    fam = SpanningTreeFamily(list(levels), trees, verts, parent, builder=builder)
    if nmap is not None:
        fam.bad, fam.bad_info = bad_vertices(nmap, fam)
        fam.bad_level = len(levels) - 1
    return fam


def _vertex_id(fam: SpanningTreeFamily, bubble) -> str:
    if isinstance(bubble, str):
        return bubble
    z = getattr(bubble, "center", bubble)
    g = fam.levels[-1].graph
    for v in fam.vertices[-1]:
        a = g.vertices[v].anchor
        if a is not None and abs(a - z) < 1e-7 * (1 + abs(z)):
            return v
    raise CenterNotInTree(f"no vertex of T_{len(fam.trees) - 1} at {complex(z):.6g}")


def predecessor(fam: SpanningTreeFamily, bubble) -> str:
    """Center of the predecessor bubble.

    ``bubble`` is a vertex id, a center point or an object with a ``center``.
    Immediate basins are their own predecessors; otherwise the predecessor
    is the next Fatou vertex on the tree path toward infinity.
    """
    v = _vertex_id(fam, bubble)
    if fam.is_root(v):
        return v
    g = fam.levels[-1].graph
    if v not in g.vertices or g.vertices[v].kind != FATOU:
        raise CenterNotInTree(f"{v} is not a bubble center")
    path = fam.path_to_infinity(v)
    for w in path[1:]:
        if g.vertices[w].kind == FATOU:
            return w
    raise CenterNotInTree(f"no Fatou vertex between {v} and infinity")


def predecessor_chain(fam: SpanningTreeFamily, v: str) -> list:
    """``[root, ..., P(v), v]``."""
    chain = [v]
    while not fam.is_root(chain[-1]):
        chain.append(predecessor(fam, chain[-1]))
    return chain[::-1]


def bad_vertices(nmap, fam: SpanningTreeFamily):
    """Fatou vertices whose spanning tree holds the preimages of critical points and poles.

    Fatou members of ``N^-1(S)`` enter directly; a Julia member enters
    through its Fatou neighbours in the tree.  The set is then closed under
    predecessors.  Returns ``(V_bad, info)``.
    """
    from .core import critical_points

    L = len(fam.trees) - 1
    lv = fam.levels[L]
    g = lv.graph
    T = fam.vertices[L]
    special = np.concatenate([critical_points(nmap).points, nmap.poles()])
    S = set()
    for v in T:
        a = g.vertices[v].anchor
        if a is not None and np.min(np.abs(special - a)) < 1e-7 * (1 + abs(a)):
            S.add(v)
    vmap = lv.to_parent.vertex_map if lv.to_parent is not None else {v: v for v in g.vertices}
    pre = {v for v in T if vmap.get(v) in S}
    adj = {}
    for e in fam.trees[L]:
        u, w = g.edges[e].ends
        adj.setdefault(u, set()).add(w)
        adj.setdefault(w, set()).add(u)
    seeds = set()
    for v in pre:
        if g.vertices[v].kind == FATOU:
            seeds.add(v)
        else:
            seeds.update(w for w in adj.get(v, ()) if g.vertices[w].kind == FATOU)
    bad = set()
    for v in seeds:
        bad.update(predecessor_chain(fam, v))
    prev_T = fam.vertices[L - 1] if L >= 1 else frozenset()
    poles_in = all(
        any(abs(g.vertices[v].anchor - p) < 1e-7 for v in prev_T if g.vertices[v].anchor is not None)
        for p in nmap.poles()
    )
    info = {"level": L, "special": sorted(S), "preimages": sorted(pre), "poles_in_previous_tree": poles_in}
    return frozenset(bad), info


# ---------------------------------------------------------------------------
# curves of the builder cache


def _ends(builder, cid: str, o: int):
    c = builder.edges[cid]
    return (c.start, c.end) if o > 0 else (c.end, c.start)


def path_trace(builder, path) -> np.ndarray:
    parts = []
    for cid, o in path:
        tr = builder.edges[cid].trace
        tr = tr if o > 0 else tr[::-1]
        parts.append(tr if not parts else tr[1:])
    return np.concatenate(parts) if parts else np.zeros(0, dtype=complex)


def path_vertices(builder, path) -> list:
    if not path:
        return []
    out = [_ends(builder, *path[0])[0]]
    out.extend(_ends(builder, cid, o)[1] for cid, o in path)
    return out


def _path_marks(builder, path) -> list:
    """Indices of the vertices of ``path`` inside ``path_trace``."""
    marks, pos = [0], 0
    for cid, o in path:
        pos += len(builder.edges[cid].trace) - 1
        marks.append(pos)
    return marks


# ---------------------------------------------------------------------------
# geometric lifting


def lift_trace(nmap, w, marks, start: complex, tol: float = 1e-6):
    """Inverse branch of ``N`` along ``w`` beginning at ``start``.

    ``marks`` are indices of distinguished samples of ``w``; their positions
    in the (refined) lift are returned alongside.  Every sample of the lift
    maps onto the polyline ``w``.
    """
    w = np.asarray(w, dtype=complex)
    wr, Z = preimage_curves(nmap, w, skip_ends=False)
    j = int(np.argmin(np.abs(Z[0] - start)))
    if abs(Z[0, j] - start) > tol * (1 + abs(start)):
        raise BranchJumpDetected(f"no inverse branch starts at {start:.6g}")
    pos = np.empty(len(w), dtype=int)
    k = 0
    for i, z in enumerate(wr):
        if k < len(w) and z == w[k]:
            pos[k] = i
            k += 1
    if k != len(w):
        raise BranchJumpDetected("refined polyline lost an original sample")
    br = Z[:, j].copy()
    br[0] = start
    return br, [int(pos[m]) for m in marks]


def lift_trace_iterate(nmap, w, marks, end: complex, m: int):
    """Lift ``w`` under ``N^m`` so that the lift begins at ``end``."""
    chain = [complex(end)]
    for _ in range(m - 1):
        chain.append(complex(nmap(chain[-1])))
    for j in range(m):
        w, marks = lift_trace(nmap, w, marks, chain[m - 1 - j])
    return w, marks


# ---------------------------------------------------------------------------
# Newton rays


@dataclass
class NewtonRay:
    id: str
    base: str  # vertex of Delta_N
    landing: complex
    trace: np.ndarray = field(repr=False)  # from the base to the landing point
    marks: list = field(repr=False)  # trace indices of the ray's graph vertices
    kinds: list = field(repr=False)  # FATOU / JULIA for each mark
    level: int = 0
    period: int | None = None
    preperiod: int = 0
    segments: int = 0  # fundamental segments of a periodic ray
    meta: dict = field(default_factory=dict)

    def vertex_points(self) -> np.ndarray:
        return self.trace[self.marks]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "base": self.base,
            "landing": [self.landing.real, self.landing.imag],
            "period": self.period,
            "preperiod": self.preperiod,
            "level": self.level,
            "trace": [[round(z.real, 12), round(z.imag, 12)] for z in self.trace],
        }


def point_period(nmap, z: complex, max_period: int = 64, tol: float = 1e-8) -> int:
    w = complex(z)
    for k in range(1, max_period + 1):
        w = complex(nmap(w))
        if abs(w - z) < tol * (1 + abs(z)):
            return k
    raise SearchBudgetExceeded(f"{z:.6g} is not periodic with period <= {max_period}")


def refine_fixed_point(nmap, z: complex, m: int, steps: int = 60) -> complex:
    z = complex(z)
    for _ in range(steps):
        w, dw = iterate_with_derivative(nmap, np.array([z]), m)
        dz = complex((w[0] - z) / (dw[0] - 1))
        z -= dz
        if abs(dz) < 1e-15 * (1 + abs(z)):
            break
    return z


def _points_in_polygon(poly: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Even-odd rule, vectorized over points."""
    inside = np.zeros(pts.shape, dtype=bool)
    x, y = pts.real, pts.imag
    b = np.roll(poly, -1)
    for ax, ay, bx, by in zip(poly.real, poly.imag, b.real, b.imag):
        cond = (ay > y) != (by > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = ax + (y - ay) * (bx - ax) / (by - ay)
        inside ^= cond & (x < xc)
    return inside


def _face_subgraph(builder, N: int, m: int, omega: complex):
    """Edges of ``Delta_{N+m}`` inside the face of ``Delta_N`` around ``omega``."""
    gN = builder.level(N).graph
    gM = builder.level(N + m).graph
    loc = FaceLocator(gN)
    fid = loc(omega)
    if fid is None:
        raise SearchBudgetExceeded("landing point is not inside a bounded face")
    poly = loc.polygon(fid)
    boundary = []
    for d in loc.face(fid).darts:
        v = gN.dart_vertex(d)
        if v not in boundary and v != "inf":
            boundary.append(v)
    cand = [e for e in sorted(gM.edges) if e not in gN.edges]
    mids = np.array([gM.edges[e].trace[len(gM.edges[e].trace) // 2] for e in cand], dtype=complex)
    box = (
        np.isfinite(mids)
        & (mids.real >= poly.real.min())
        & (mids.real <= poly.real.max())
        & (mids.imag >= poly.imag.min())
        & (mids.imag <= poly.imag.max())
    )
    inside = np.zeros(len(cand), dtype=bool)
    if box.any():
        inside[box] = _points_in_polygon(poly, mids[box])
    edges = [e for e, ok in zip(cand, inside) if ok]
    return gN, gM, edges, boundary


def _forward_vertex(builder, N: int, m: int, v: str) -> str:
    for k in range(m):
        v = builder.level(N + m - k).to_parent.vertex_map[v]
    return v


def candidate_segments(builder, N: int, m: int, omega: complex) -> list:
    """Fundamental segment candidates ``(length, x, y, path)`` in deterministic order.

    ``path`` is a shortest edge path of ``Delta_{N+m}`` inside the face of
    ``Delta_N`` around ``omega`` from a boundary vertex ``x`` to a vertex
    ``y`` with ``N^m(y) = x``.
    """
    gN, gM, edges, boundary = _face_subgraph(builder, N, m, omega)
    adj = {}
    for e in edges:
        u, w = gM.edges[e].ends
        adj.setdefault(u, []).append((e, 1, w))
        adj.setdefault(w, []).append((e, -1, u))
    for v in adj:
        adj[v].sort()
    targets = {v for v in adj if v not in gN.vertices}
    image = {v: _forward_vertex(builder, N, m, v) for v in targets}
    out = []
    for x0 in boundary:
        if x0 not in adj:
            continue
        prev = {x0: None}
        queue = deque([x0])
        while queue:
            v = queue.popleft()
            for e, o, w in adj[v]:
                if w in prev or w in gN.vertices:
                    continue
                prev[w] = (v, e, o)
                queue.append(w)
        for y in sorted(t for t in prev if t in targets and image[t] == x0):
            path, v = [], y
            while prev[v] is not None:
                u, e, o = prev[v]
                path.append((e, o))
                v = u
            out.append((len(path), x0, y, path[::-1]))
    out.sort(key=lambda t: (t[0], t[1], t[2]))
    return out


def _grow_periodic_ray(nmap, w0, marks0, m: int, omega: complex, max_generations: int, truncate: float):
    """Iterated ``N^m``-lifts of a fundamental segment; ``None`` unless they shrink onto ``omega``."""
    segs = [(w0, marks0)]
    dist = [abs(w0[-1] - omega)]
    for g in range(max_generations):
        w, marks = segs[-1]
        lw, lm = lift_trace_iterate(nmap, w, marks, w[-1], m)
        segs.append((lw, lm))
        d = abs(lw[-1] - omega)
        size = float(np.max(np.abs(lw - lw[-1])))
        if size < 0.01 * d or (g >= 2 and d > 0.999 * dist[-1]):
            return None  # heading for another periodic point
        dist.append(d)
        if size < truncate:
            return segs
    return None


def _assemble_ray(rid, base, segs, kinds0, landing, N, period, meta=None) -> NewtonRay:
    parts, marks, kinds = [], [], []
    off = 0
    for i, (w, mk) in enumerate(segs):
        skip = 0 if i == 0 else 1
        parts.append(w[skip:])
        for j, (p, k) in enumerate(zip(mk, kinds0)):
            if i > 0 and j == 0:
                continue
            marks.append(off + p - skip)
            kinds.append(k)
        off += len(w) - skip
    trace = np.append(np.concatenate(parts), landing)
    return NewtonRay(rid, base, landing, trace, marks, kinds, N, period, 0, len(segs), dict(meta or {}))


def iter_periodic_rays(
    nmap,
    omega: complex,
    *,
    builder,
    level: int,
    period: int | None = None,
    max_candidates: int = 200,
    max_generations: int = 200,
    truncate: float = TRUNCATE,
    rid: str = "R",
    accept=None,
):
    """Periodic Newton rays landing at ``omega`` in deterministic candidate order.

    A candidate fundamental segment (see ``candidate_segments``) yields a ray
    when its iterated lifts shrink onto ``omega`` and ``accept`` (if given)
    approves it.  Periods ``p, 2p, 3p`` are tried in turn when ``period`` is
    not given, ``p`` being the period of ``omega``.
    """
    p = point_period(nmap, omega)
    periods = [period] if period else [p * r for r in (1, 2, 3)]
    for m in periods:
        omega_m = refine_fixed_point(nmap, omega, m)
        _, dz = iterate_with_derivative(nmap, np.array([omega_m]), m)
        if abs(dz[0]) <= 1 + 1e-6:
            raise SearchBudgetExceeded(f"{omega:.6g} is not repelling (multiplier {abs(dz[0]):.3g})")
        for n, (_, x0, y, S0) in enumerate(candidate_segments(builder, level, m, omega_m)):
            if n >= max_candidates:
                break
            w0 = path_trace(builder, S0)
            marks0 = _path_marks(builder, S0)
            kinds0 = [builder.vertices[v][1] for v in path_vertices(builder, S0)]
            try:
                segs = _grow_periodic_ray(nmap, w0, marks0, m, omega_m, max_generations, truncate)
            except BranchJumpDetected:
                continue
            if segs is None:
                continue
            landing = refine_fixed_point(nmap, segs[-1][0][-1], m)
            if abs(landing - omega_m) > 1e-7:
                continue
            meta = {"candidate": n, "multiplier": float(abs(dz[0])), "segment": [e for e, _ in S0]}
            ray = _assemble_ray(rid, x0, segs, kinds0, omega_m, level, m, meta)
            if accept is not None and not accept(ray):
                continue
            yield ray


def find_periodic_ray_at(
    nmap,
    omega: complex,
    family: SpanningTreeFamily | None = None,
    *,
    builder=None,
    level: int,
    period: int | None = None,
    seed: int = 0,
    **kw,
) -> NewtonRay:
    """A periodic Newton ray based on ``Delta_level`` landing at the repelling periodic point ``omega``.

    ``seed`` picks among the rays of ``iter_periodic_rays`` in order.
    """
    builder = builder if builder is not None else family.builder
    for k, ray in enumerate(iter_periodic_rays(nmap, omega, builder=builder, level=level, period=period, **kw)):
        if k == seed:
            return ray
    raise SearchBudgetExceeded(f"fewer than {seed + 1} periodic rays found at {omega:.6g}")


def _graph_vertex_at(graph: PlanarGraph, z: complex, tol: float = 1e-8):
    if not np.isfinite(z) or abs(z) > 1e12:
        return graph.infinity() if "inf" in graph.vertices else None
    best, bd = None, tol * (1 + abs(z))
    for v in graph.vertices.values():
        if v.anchor is not None and abs(v.anchor - z) < bd:
            best, bd = v.id, abs(v.anchor - z)
    return best


def _edge_between(graph: PlanarGraph, u: str, v: str, mid: complex, tol: float = 1e-7):
    """Oriented edge from ``u`` to ``v`` passing through ``mid``, or ``None``."""
    from .newton_graph import _dist_to_polyline

    best = None
    for e in graph.edges.values():
        if set(e.ends) != {u, v} or e.trace is None:
            continue
        d = _dist_to_polyline(e.trace, mid)
        if d < tol * (1 + abs(mid)) and (best is None or d < best[0]):
            best = (d, e.id, 1 if e.ends == (u, v) else -1)
    return None if best is None else best[1:]


def push_forward(nmap, ray: NewtonRay, graph: PlanarGraph, rid: str | None = None) -> tuple:
    """Split ``N(ray)`` into its initial run along ``graph`` and the image ray.

    Returns ``(edges, image)`` where ``edges`` are the oriented graph edges
    the image follows before leaving the graph at the image ray's base.
    Raises ``SeparationViolated`` when the image meets the graph again.
    """
    with np.errstate(all="ignore"):
        img = nmap(ray.trace[:-1])
    landing = complex(nmap(ray.landing))
    onto = [_graph_vertex_at(graph, img[p]) for p in ray.marks]
    if onto[0] is None:
        raise SeparationViolated("the image of the base is not a graph vertex")
    edges, k = [], 0
    while k + 1 < len(onto) and onto[k + 1] is not None:
        a, b = ray.marks[k], ray.marks[k + 1]
        mid = img[(a + b) // 2] if b - a > 1 else 0.5 * (img[a] + img[b])
        step = _edge_between(graph, onto[k], onto[k + 1], mid)
        if step is None:
            break
        edges.append(step)
        k += 1
    if k == len(onto) - 1:
        raise SeparationViolated("the image of the ray lies on the graph")
    later = [i for i in range(k + 1, len(onto)) if onto[i] is not None]
    if later:
        raise SeparationViolated(f"the image of {ray.id} returns to the graph at {onto[later[0]]}")
    start = ray.marks[k]
    trace = np.append(img[start:], landing)
    marks = [p - start for p in ray.marks[k:]]
    out = NewtonRay(rid or ray.id + "'", onto[k], landing, trace, marks, ray.kinds[k:], ray.level, ray.period,
                    max(ray.preperiod - 1, 0), ray.segments)
    return edges, out


def lift_ray(nmap, ray: NewtonRay, landing: complex, graph: PlanarGraph, lead=None, rid: str = "R"):
    """Lift of ``lead ∪ ray`` under ``N`` landing at ``landing``, cut at its first vertex on ``graph``.

    The lift is followed backward from ``landing`` one piece at a time and
    stops at the first vertex lying on ``graph``.  ``lead`` is an optional
    ``(trace, marks, kinds)`` continuing the ray backward from its base.
    The only critical points met this way are roots, which are graph
    vertices, so the lift never has to continue through a critical point.
    Returns ``None`` when the lift does not reach the graph.
    """
    tr, marks, kinds = ray.trace, list(ray.marks), list(ray.kinds)
    if lead is not None:
        ltr, lmarks, lkinds = lead
        tr = np.concatenate([ltr[:-1], tr])
        marks = list(lmarks[:-1]) + [len(ltr) - 1 + p for p in marks]
        kinds = list(lkinds[:-1]) + kinds
    bounds = marks + [len(tr) - 1]
    cur = complex(landing)
    pieces = []
    for i in range(len(bounds) - 1, 0, -1):
        w = tr[bounds[i - 1] : bounds[i] + 1][::-1]
        if len(w) < 2:
            continue
        _, Z = preimage_curves(nmap, w, skip_ends=True)
        j = int(np.argmin(np.abs(Z[0] - cur)))
        if abs(Z[0, j] - cur) > 1e-6 * (1 + abs(cur)):
            raise BranchJumpDetected(f"no inverse branch continues from {cur:.6g}")
        br = Z[:, j].copy()
        br[0] = cur
        exact = np.array([p for p, _ in nmap.vertex_preimages(w[-1])])
        br[-1] = exact[np.argmin(np.abs(exact - br[-1]))]
        pieces.append(br)
        cur = complex(br[-1])
        base = _graph_vertex_at(graph, cur)
        if base is not None:
            cut = i - 1
            break
    else:
        return None
    parts = [p[::-1] for p in pieces[::-1]]
    trace = np.concatenate([parts[0]] + [p[1:] for p in parts[1:]])
    new_marks = [0]
    for p in parts:
        new_marks.append(new_marks[-1] + len(p) - 1)
    new_marks = new_marks[:-1]
    return NewtonRay(rid, base, complex(landing), trace, new_marks, kinds[cut:], ray.level, None,
                     ray.preperiod + 1, 0, {"lifted_from": ray.id, "cut": cut})


def forward_image_test(nmap, ray: NewtonRay, k: int, graph: PlanarGraph, tol: float = HAUSDORFF_TOL,
                       target: NewtonRay | None = None, index: PolylineIndex | None = None) -> dict:
    """Compare ``N^k(ray)`` with ``target ∪ E`` for a union ``E`` of graph edges.

    ``target`` defaults to the ray itself.  The Hausdorff distance is taken
    between the image and ``target`` together with the graph edges the image
    runs along.
    """
    target = ray if target is None else target
    img = ray.trace.copy()
    with np.errstate(all="ignore"):
        for _ in range(k):
            img = nmap(img)
    cap = 1e-3
    d_ray = PolylineIndex([target.trace], cap).distance(img)
    gidx = index if index is not None else PolylineIndex([e.trace for e in graph.edges.values()], cap)
    d_img = np.minimum(d_ray, gidx.distance(img))
    back = PolylineIndex([img], cap).distance(target.trace)
    E = []
    if np.max(d_img) < tol:
        img_idx = PolylineIndex([img], cap)
        for e in graph.edges.values():
            tr = e.trace[np.isfinite(e.trace)]
            inner = tr[1:-1] if tr.size > 2 else 0.5 * (tr[:1] + tr[-1:])
            if np.all(img_idx.distance(inner) < tol):
                E.append(e.id)
    h = float(max(np.max(d_img), np.max(back)))
    return {"ok": h < tol, "hausdorff": h, "edges": sorted(E)}


def ray_period(nmap, ray: NewtonRay, graph: PlanarGraph, max_period: int = 12, tol: float = HAUSDORFF_TOL):
    """Smallest ``k`` with ``N^k(R) = R ∪ E`` and the per-``k`` Hausdorff distances."""
    idx = PolylineIndex([e.trace for e in graph.edges.values()], 1e-3)
    dists = {}
    for k in range(1, max_period + 1):
        res = forward_image_test(nmap, ray, k, graph, tol, index=idx)
        dists[k] = res["hausdorff"]
        if res["ok"]:
            return k, dists
    return None, dists


def graph_contacts(ray: NewtonRay, graph: PlanarGraph, tol: float = 1e-7) -> list:
    """Index ranges of the stretches of the ray trace lying on the graph."""
    idx = PolylineIndex([e.trace for e in graph.edges.values()], 1e-3)
    near = idx.distance(ray.trace[:-1]) < tol
    starts = np.nonzero(near & ~np.concatenate([[False], near[:-1]]))[0]
    ends = np.nonzero(near & ~np.concatenate([near[1:], [False]]))[0]
    return [(int(a), int(b)) for a, b in zip(starts, ends)]


def landing_residual(nmap, ray: NewtonRay) -> float:
    """Distance from the last computed sample to the refined periodic point it lands on."""
    m = ray.period or point_period(nmap, ray.landing)
    target = refine_fixed_point(nmap, ray.landing, m)
    return float(abs(ray.trace[-2] - target))


# ---------------------------------------------------------------------------
# bubble rays


@dataclass
class BubbleRay:
    bubbles: list  # Fatou vertex ids, B_0 an immediate basin
    witnesses: list  # shared Julia vertex between consecutive bubbles, when known
    infinite: bool
    landing: complex | None = None


def bubble_ray(builder, ray: NewtonRay, family: SpanningTreeFamily | None = None) -> BubbleRay:
    """Bubbles crossed by a Newton ray, prefixed by predecessors back to an immediate basin.

    Only bubbles whose centers are vertices of the computed levels are
    named; the list stops at the first deeper one.
    """
    ids = []
    for p, k in zip(ray.marks, ray.kinds):
        v = builder._find_vertex(ray.trace[p])
        if v is None:
            break
        ids.append((v, k))
    centers = [v for v, k in ids if k == FATOU]
    wit = []
    flat = [v for v, _ in ids]
    for a, b in zip(centers, centers[1:]):
        between = [v for v, k in ids[flat.index(a) + 1 : flat.index(b)] if k != FATOU]
        wit.append(between[0] if between else None)
    if family is not None and centers and centers[0] in family.parent:
        prefix = predecessor_chain(family, centers[0])[:-1]
        centers = prefix + centers
        wit = [None] * len(prefix) + wit
    return BubbleRay(centers, wit, True, ray.landing)


# ---------------------------------------------------------------------------
# ray order and right envelopes


def _angle_profile(trace: np.ndarray, omega: complex, radii) -> list:
    """Argument of the first exit of the reversed trace from each circle around ``omega``."""
    rel = trace[::-1] - omega
    dist = np.abs(rel)
    out = []
    for r in radii:
        j = np.nonzero(dist > r)[0]
        if j.size == 0:
            out.append(np.nan)
            continue
        j = int(j[0])
        if j == 0:
            out.append(float(np.angle(rel[0])))
            continue
        t = (r - dist[j - 1]) / (dist[j] - dist[j - 1])
        out.append(float(np.angle(rel[j - 1] + t * (rel[j] - rel[j - 1]))))
    return out


def _trace_of(r) -> np.ndarray:
    return np.asarray(r if isinstance(r, np.ndarray) else r.trace)


def right_envelope(rays: list, e_omega: np.ndarray | None, omega: complex | None = None):
    """Rightmost ray landing at a common point, relative to the tree edge ``e_omega``.

    ``e_omega`` is a polyline starting at the landing point.  Rays are
    compared by the counterclockwise angle from ``e_omega`` at which they
    leave small circles around the landing point, smallest radius first.
    The ray that comes first after ``e_omega`` counterclockwise dominates.
    """
    if not rays:
        raise ValueError("no rays")
    if e_omega is None or len(e_omega) < 2:
        if len(rays) == 1:
            return rays[0]
        raise DegenerateTreeNoOrder("the tree at the landing point is a single vertex")
    omega = complex(e_omega[0]) if omega is None else omega
    span = min(float(np.max(np.abs(_trace_of(r) - omega))) for r in rays)
    radii = span * np.logspace(-6, -0.3, 24)
    e_ang = _angle_profile(np.asarray(e_omega)[::-1], omega, radii)
    keys = []
    for i, r in enumerate(rays):
        tr = _trace_of(r)
        ang = _angle_profile(tr, omega, radii)
        rel = [((a - b) % (2 * np.pi)) if np.isfinite(a) and np.isfinite(b) else 2 * np.pi for a, b in zip(ang, e_ang)]
        keys.append((tuple(np.round(rel, 9)), i))
    return rays[min(keys)[1]]


def precedes(r1, r2, e_omega, omega=None) -> bool:
    """``r1 ⪰ r2``: the cyclic order near the landing point is ``r1, r2, e_omega``."""
    return right_envelope([r1, r2], e_omega, omega) is r1


# ---------------------------------------------------------------------------
# abstract Newton rays


def validate_abstract_newton_ray(
    nmap,
    ray: NewtonRay,
    graph: PlanarGraph,
    periodic_rays: list | None = None,
    max_period: int = 12,
    tol: float = HAUSDORFF_TOL,
) -> ValidationReport:
    """Check the defining properties of a periodic or preperiodic abstract Newton ray.

    ``periodic_rays`` lists the periodic rays available as images of a
    preperiodic ray.
    """
    rep = ValidationReport(f"abstract Newton ray {ray.id}")
    idx = PolylineIndex([e.trace for e in graph.edges.values()], 1e-3)
    base_ok = ray.base in graph.vertices and abs(ray.trace[0] - graph.vertices[ray.base].anchor) < 1e-9
    land_off = idx.distance(np.array([ray.landing]))[0] > tol
    rep.add("endpoints", base_ok and land_off, "" if base_ok and land_off else
            ("base is not a graph vertex" if not base_ok else "landing point lies on the graph"))
    near = idx.distance(ray.trace[:-1]) < 1e-7
    runs = int(np.sum(near & ~np.concatenate([[False], near[:-1]])))
    rep.add("single-intersection", runs == 1 and bool(near[0]), f"{runs} contact stretches with the graph")
    per, dists = ray_period(nmap, ray, graph, max_period, tol)
    rep.data["hausdorff"] = dists
    if per is not None:
        rep.add("periodic", PASS, f"period {per}")
        rep.data["kind"] = "periodic"
        rep.data["period"] = per
        k_need = per
    else:
        found = None
        for l in range(1, max_period + 1):
            for pr in periodic_rays or ():
                res = forward_image_test(nmap, ray, l, graph, tol, target=pr, index=idx)
                if res["ok"]:
                    found = (l, pr)
                    break
            if found:
                break
        if found:
            rep.add("preperiodic", PASS, f"preperiod {found[0]} onto {found[1].id}")
            rep.data["kind"] = "preperiodic"
            rep.data["preperiod"] = found[0]
            k_need = found[0] + (found[1].period or 1)
        else:
            rep.add("periodic", FAIL, f"no k <= {max_period} with N^k(R) = R ∪ E")
            rep.data["kind"] = None
            k_need = max_period
    # every point except the landing point eventually reaches the graph
    tr = ray.trace[:-1]
    keep = np.abs(tr - ray.landing) > 10 * TRUNCATE
    pts = tr[keep][:: max(1, keep.sum() // 400)]
    todo = np.ones(pts.size, dtype=bool)
    steps = k_need * (ray.segments + 2 if ray.segments else 40)
    z = pts.copy()
    for _ in range(steps + 1):
        hit = idx.distance(z) < 1e-6
        todo &= ~hit
        if not todo.any():
            break
        with np.errstate(all="ignore"):
            z = np.where(todo, nmap(z), z)
    rep.add("eventually-on-graph", not todo.any(), f"{int(todo.sum())} sample points never reach the graph")
    return rep
