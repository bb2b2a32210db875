"""Extended Newton graphs.

The extended graph joins a Newton graph level ``Delta_N`` to the extended
Hubbard trees of the renormalizable pieces by Newton rays.  Each periodic
tree carries one periodic ray.  Trees are saturated once: ``H_i+`` is the
component of ``N^-1(H_{i+1})`` containing ``H_i``, and every vertex of
``H_i+`` over the landing point of a periodic ray receives the matching
preimage ray.  Without those preimage arcs the faces around free critical
points would contain two sectors with the same image and the map would have
no regular extension.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from shapely import STRtree
from shapely.geometry import LineString, Point

from .core import LOOSE_CYCLE_TOL, CycleInfo, NewtonMap, critical_points, orbit, refine_pcf, verify_head
from .errors import MissingRay, NoConvergence, NumericError, SeparationViolated, SkeletonAmbiguous
from .newton_graph import NewtonGraphBuilder, eventually_fixed_critical_points, select_level
from .planar import (
    FATOU,
    INFINITY,
    JULIA,
    GraphMap,
    graph_map_from_json,
    PlanarGraph,
    check_regular_extension,
    promote_weak_map,
    set_rotations_from_geometry,
    validate_abstract_newton_graph,
)
from .pullback import preimage_curves
from .rays import (
    HAUSDORFF_TOL,
    NewtonRay,
    PolylineIndex,
    iter_periodic_rays,
    point_period,
    forward_image_test,
    iterate_with_derivative,
    lift_ray,
    push_forward,
)
from .renormalization import (
    BRANCH,
    CYCLE_POINT,
    FaceLocator,
    HubbardTreeSpec,
    build_hubbard_tree,
    find_renorm_domains,
    group_pieces,
    periodic_postcritical,
    thicken,
    tree_path,
    validate_abstract_extended_hubbard_tree,
)
from .report import FAIL, INDETERMINATE, PASS, UNCHECKED, ValidationReport

GROUP_LEVEL = 4  # Newton graph level used to group postcritical points into pieces
SNAP = 1e-9
MATCH = 1e-7


# ---------------------------------------------------------------------------
# saturated trees


@dataclass
class SaturatedTree:
    index: int
    spec: HubbardTreeSpec = field(repr=False)
    tree: PlanarGraph = field(repr=False)
    image: int  # index of the tree receiving N(tree)
    vertex_image: dict  # vertex -> vertex of the original image tree
    original: dict  # vertex of the original tree -> vertex of this tree


def tree_images(nmap, specs: list) -> list:
    """Index of the tree containing ``N(H_i)`` for every tree."""
    out = []
    for spec in specs:
        marked = [v for v in spec.tree.vertices.values() if v.data.get("role") != BRANCH]
        w = complex(nmap(marked[0].anchor))
        best = None
        for j, other in enumerate(specs):
            d = min(abs(v.anchor - w) for v in other.tree.vertices.values())
            if best is None or d < best[0]:
                best = (d, j)
        if best[0] > MATCH:
            raise SkeletonAmbiguous(f"image of tree {spec.tree.meta.get('domain')} is not on another tree")
        out.append(best[1])
    return out


def _pixel(spec: HubbardTreeSpec) -> float:
    return spec.viewport.pixel if spec.viewport is not None else 1e-3


def saturate(nmap, specs: list, images: list | None = None) -> list:
    """Saturated trees ``H_i+``, the components of ``N^-1(H_{image(i)})`` containing ``H_i``."""
    images = tree_images(nmap, specs) if images is None else images
    out = []
    for i, spec in enumerate(specs):
        j = images[i]
        Hj = specs[j].tree
        pts, parent = [], []

        def register(z, pv):
            for k, q in enumerate(pts):
                if abs(q - z) < SNAP * (1 + abs(z)):
                    return k
            pts.append(complex(z))
            parent.append(pv)
            return len(pts) - 1

        branches = []
        if not Hj.edges:
            for z, _ in nmap.vertex_preimages(next(iter(Hj.vertices.values())).anchor):
                register(z, next(iter(Hj.vertices)))
        for e in sorted(Hj.edges.values(), key=lambda e: e.id):
            u, w = e.ends
            _, Z = preimage_curves(nmap, e.trace, skip_ends=True)
            for end, vid in ((0, u), (-1, w)):
                exact = np.array([p for p, _ in nmap.vertex_preimages(Hj.vertices[vid].anchor)])
                for col in range(Z.shape[1]):
                    Z[end, col] = exact[np.argmin(np.abs(exact - Z[end, col]))]
            for col in range(Z.shape[1]):
                a = register(Z[0, col], u)
                b = register(Z[-1, col], w)
                branches.append((a, b, Z[:, col].copy(), e.id))
        # grow the component through a marked point of H_i
        seed_v = next(v for v in spec.tree.vertices.values() if v.data.get("role") != BRANCH)
        d = [abs(q - seed_v.anchor) for q in pts]
        if min(d) > MATCH:
            raise SkeletonAmbiguous(f"tree {i}: marked point {seed_v.id} is not over a vertex of tree {j}")
        comp = {int(np.argmin(d))}
        used = set()
        grew = True
        while grew:
            grew = False
            for k, (a, b, _, _) in enumerate(branches):
                if k not in used and (a in comp or b in comp):
                    used.add(k)
                    comp.update((a, b))
                    grew = True
        tol_px = 4 * max(_pixel(spec), _pixel(specs[j]))
        names = {}
        original = {}
        for v in spec.tree.vertices.values():
            cand = sorted(comp, key=lambda k: abs(pts[k] - v.anchor))
            k = cand[0]
            lim = tol_px if v.data.get("role") == BRANCH else MATCH
            if abs(pts[k] - v.anchor) > lim:
                raise SkeletonAmbiguous(f"tree {i}: vertex {v.id} is not in the preimage of tree {j}")
            names[k] = v.id
            original[v.id] = v.id
        extra = sorted((k for k in comp if k not in names), key=lambda k: (round(pts[k].real, 9), round(pts[k].imag, 9)))
        for n, k in enumerate(extra):
            names[k] = f"x{n}"
        tree = PlanarGraph({"kind": "saturated-tree", "tree": i, "image": j})
        for k in sorted(comp, key=lambda k: names[k]):
            src = spec.tree.vertices.get(names[k])
            kind = src.kind if src is not None else Hj.vertices[parent[k]].kind
            role = src.data.get("role") if src is not None else "preimage"
            tree.add_vertex(names[k], kind=kind, anchor=pts[k], role=role)
        for n, k in enumerate(sorted(used, key=lambda k: (names[branches[k][0]], names[branches[k][1]], branches[k][3]))):
            a, b, tr, pe = branches[k]
            tree.add_edge(f"s{n}", names[a], names[b], trace=tr, etype="H", parent=pe)
        if len(tree.edges) != len(tree.vertices) - 1:
            raise SkeletonAmbiguous(f"saturated tree {i} has a cycle")
        set_rotations_from_geometry(tree)
        vimg = {names[k]: parent[k] for k in comp}
        out.append(SaturatedTree(i, spec, tree, j, vimg, original))
    return out


def _tree_edge_map(sat: list, i: int) -> tuple:
    """Vertex and edge maps of ``H_i+`` into ``H_{image}+``, with prefixed ids."""
    t = sat[i]
    tgt = sat[t.image]
    vmap, emap = {}, {}
    for v in t.tree.vertices:
        vmap[f"H{i}.{v}"] = f"H{t.image}.{tgt.original[t.vertex_image[v]]}"
    for e in t.tree.edges.values():
        a = tgt.original[t.vertex_image[e.ends[0]]]
        b = tgt.original[t.vertex_image[e.ends[1]]]
        emap[f"H{i}.{e.id}"] = [(f"H{t.image}.{x}", o) for x, o in tree_path(tgt.tree, a, b)]
    return vmap, emap


# ---------------------------------------------------------------------------
# assembly


@dataclass
class ExtendedNewtonGraph:
    nmap: object = field(repr=False)
    level: int
    graph: PlanarGraph = field(repr=False)
    map: GraphMap = field(repr=False)
    builder: object = field(repr=False)
    trees: list = field(repr=False)  # SaturatedTree
    rays: list = field(repr=False)  # periodic NewtonRay, in orbit order
    aux_rays: list = field(repr=False)  # preperiodic NewtonRay
    domains: list = field(repr=False, default_factory=list)
    ray_edges: dict = field(default_factory=dict)  # ray id -> lead edges of its image
    info: dict = field(default_factory=dict)

    def strip_rays(self) -> PlanarGraph:
        """The graph with every ray edge removed."""
        keep = [e for e, ed in self.graph.edges.items() if ed.etype != "R"]
        return self.graph.subgraph(keep, keep_vertices=list(self.graph.vertices))

    def to_json(self) -> dict:
        data = self.graph.to_json()
        data["maps"] = [self.map.to_json()]
        data["level"] = self.level
        data["degree"] = int(len(self.nmap.roots))
        data["roots"] = [[float(z.real), float(z.imag)] for z in self.nmap.roots]
        data["rays"] = [r.to_json() for r in self.rays + self.aux_rays]
        return data

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _tree_vertex_at(sat: list, z: complex):
    for t in sat:
        for v in t.tree.vertices.values():
            if abs(v.anchor - z) < MATCH * (1 + abs(z)):
                return t.index, v.id
    return None


def _choose_landing(nmap, spec: HubbardTreeSpec, m: int) -> list:
    """Repelling cycle points of the tree, endpoints first."""
    out = []
    for v in spec.tree.vertices.values():
        if v.data.get("role") != CYCLE_POINT:
            continue
        _, dz = iterate_with_derivative(nmap, np.array([v.anchor]), m)
        if abs(dz[0]) > 1 + 1e-6:
            out.append((spec.tree.valence(v.id), round(v.anchor.real, 9), round(v.anchor.imag, 9), v.anchor))
    return [t[-1] for t in sorted(out)]


def _lead_trace(graph: PlanarGraph, edges: list):
    parts, marks, kinds = [], [0], []
    for eid, o in edges:
        tr = graph.edges[eid].trace
        tr = tr if o > 0 else tr[::-1]
        parts.append(tr if not parts else tr[1:])
        marks.append(marks[-1] + len(tr) - 1)
    verts = [graph.edges[edges[0][0]].ends[0 if edges[0][1] > 0 else 1]] if edges else []
    verts += [graph.edges[e].ends[1 if o > 0 else 0] for e, o in edges]
    kinds = [graph.vertices[v].kind for v in verts]
    return np.concatenate(parts), marks, kinds


def same_curve(a, b, tol: float = 1e-6) -> bool:
    """Symmetric Hausdorff test between two polylines."""
    da = PolylineIndex([b], 10 * tol).distance(a)
    db = PolylineIndex([a], 10 * tol).distance(b)
    return bool(max(da.max(), db.max()) < tol)


def periodic_ray_orbit(nmap, ray: NewtonRay, graph: PlanarGraph, max_len: int = 64):
    """The cycle ``gamma_0, gamma_1, ...`` of a periodic ray and the graph edges ``E_k`` of each image."""
    rays, leads = [ray], []
    for k in range(max_len):
        edges, nxt = push_forward(nmap, rays[-1], graph, rid=f"R{k + 1}")
        leads.append(edges)
        if abs(nxt.landing - ray.landing) < MATCH * (1 + abs(ray.landing)) and nxt.base == ray.base:
            return rays, leads
        rays.append(nxt)
    raise MissingRay("ray orbit did not close")


def assemble_extended(nmap, builder, level: int, specs: list, domains: list | None = None, seed: int = 0,
                      images: list | None = None) -> ExtendedNewtonGraph:
    """Build the extended Newton graph from ``Delta_level`` and periodic extended Hubbard trees."""
    g = builder.level(level).graph
    images = tree_images(nmap, specs) if images is None else images
    sat = saturate(nmap, specs, images)
    # one periodic ray per cycle of trees
    rays, leads = [], {}
    done = set()
    for i0 in range(len(specs)):
        if i0 in done:
            continue
        cyc = [i0]
        while images[cyc[-1]] != i0:
            cyc.append(images[cyc[-1]])
            if len(cyc) > len(specs):
                raise SkeletonAmbiguous("tree images do not form a cycle")
        done.update(cyc)
        m = specs[i0].plm.m if specs[i0].plm is not None else len(cyc)
        seen = []

        def closes(ray):
            # distinct rays whose orbit stays off the graph after the base
            for other in seen:
                if same_curve(ray.trace, other.trace):
                    return False
            try:
                periodic_ray_orbit(nmap, ray, g)
            except (SeparationViolated, MissingRay):
                return False
            seen.append(ray)
            return True

        gamma, count = None, 0
        landings = _choose_landing(nmap, specs[i0], m)
        # own period first, multiples only when nothing else is available
        for multiples in (False, True):
            for z in landings:
                try:
                    per = None if multiples else point_period(nmap, z)
                    for ray in iter_periodic_rays(nmap, z, builder=builder, level=level, period=per,
                                                  rid=f"R{len(rays)}", accept=closes):
                        if count == seed:
                            gamma = ray
                            break
                        count += 1
                except NumericError:
                    continue
                if gamma is not None:
                    break
            if gamma is not None:
                break
        if gamma is None:
            raise MissingRay(f"no periodic ray (seed {seed}) lands on tree {i0}")
        orb, lead = periodic_ray_orbit(nmap, gamma, g)
        base = len(rays)
        for k, (r, e) in enumerate(zip(orb, lead)):
            r.id = f"R{base + k}"
            r.preperiod = 0
            r.period = len(orb)
            leads[r.id] = (e, f"R{base + (k + 1) % len(orb)}")
        rays.extend(orb)
    # preimage rays at saturated vertices over periodic landing points
    by_id = {r.id: r for r in rays}
    landing_of = {_tree_vertex_at(sat, r.landing): r for r in rays}
    aux = []
    for t in sat:
        for v in sorted(t.tree.vertices):
            if (t.index, v) in landing_of:
                continue
            z = t.tree.vertices[v].anchor
            w = complex(nmap(z))
            target = next((r for r in rays if abs(r.landing - w) < MATCH * (1 + abs(w))), None)
            if target is None:
                continue
            prev = next(rid for rid, (_, nxt) in leads.items() if nxt == target.id)
            lead_edges = leads[prev][0]
            lead = _lead_trace(g, lead_edges) if lead_edges else None
            a = lift_ray(nmap, target, z, g, lead=lead, rid=f"A{len(aux)}")
            if a is None:
                raise MissingRay(f"preimage ray at {v} of tree {t.index} does not reach the graph")
            cut = a.meta.get("cut", 0)
            a.meta["image"] = (lead_edges[cut:] if lead_edges else [], target.id)
            a.period = None
            aux.append(a)
    sigma = PlanarGraph({"kind": "extended-newton-graph", "level": level})
    for v in g.vertices.values():
        sigma.add_vertex(v.id, kind=v.kind, anchor=v.anchor, **v.data)
    for e in g.edges.values():
        sigma.add_edge(e.id, *e.ends, trace=e.trace, etype="N")
    for t in sat:
        for v in t.tree.vertices.values():
            sigma.add_vertex(f"H{t.index}.{v.id}", kind=v.kind, anchor=v.anchor, tree=t.index, **v.data)
        for e in t.tree.edges.values():
            sigma.add_edge(f"H{t.index}.{e.id}", f"H{t.index}.{e.ends[0]}", f"H{t.index}.{e.ends[1]}",
                           trace=e.trace, etype="H", tree=t.index)
    for r in rays + aux:
        ti, vid = _tree_vertex_at(sat, r.landing)
        sigma.add_edge(r.id, r.base, f"H{ti}.{vid}", trace=r.trace, etype="R", period=r.period,
                       preperiod=r.preperiod)
    set_rotations_from_geometry(sigma)
    # weak self-map
    sm = builder.level(level).self_map()
    vmap = {v: sm.vertex_map[v] for v in g.vertices}
    emap = {e: list(sm.edge_map[e]) for e in g.edges}
    for t in sat:
        tv, te = _tree_edge_map(sat, t.index)
        vmap.update(tv)
        emap.update(te)
    ray_edges = {}
    for r in rays:
        lead_edges, nxt = leads[r.id]
        emap[r.id] = list(lead_edges) + [(nxt, 1)]
        ray_edges[r.id] = list(lead_edges)
    for a in aux:
        lead_edges, nxt = a.meta["image"]
        emap[a.id] = list(lead_edges) + [(nxt, 1)]
        ray_edges[a.id] = list(lead_edges)
    f = GraphMap(sigma, sigma, vmap, emap, nmap)
    info = {"images": images, "seed": seed}
    return ExtendedNewtonGraph(nmap, level, sigma, f, builder, sat, rays, aux, list(domains or []), ray_edges, info)


# ---------------------------------------------------------------------------
# validation


def _linestrings(graph: PlanarGraph, clip: float = 50.0):
    out = {}
    for e in graph.edges.values():
        tr = e.trace[np.isfinite(e.trace) & (np.abs(e.trace) < clip)]
        if tr.size >= 2:
            out[e.id] = LineString(np.column_stack([tr.real, tr.imag]))
    return out


def crossing_violations(graph: PlanarGraph, etypes=("H", "R"), tol: float = 1e-6, limit: int = 10) -> list:
    """Pairs of edges whose traces meet away from common vertices.

    Only pairs involving an edge of one of ``etypes`` are tested; the Newton
    graph edges are covered by their own validation.
    """
    lines = _linestrings(graph)
    ids = sorted(lines)
    tree = STRtree([lines[i] for i in ids])
    anchors = {v.id: v.anchor for v in graph.vertices.values() if v.anchor is not None}
    bad = []
    for a in ids:
        if graph.edges[a].etype not in etypes:
            continue
        for k in tree.query(lines[a]):
            b = ids[int(k)]
            if b == a or (graph.edges[b].etype in etypes and b < a):
                continue
            inter = lines[a].intersection(lines[b])
            if inter.is_empty:
                continue
            shared = set(graph.edges[a].ends) & set(graph.edges[b].ends)
            allowed = [Point(anchors[v].real, anchors[v].imag).buffer(max(tol, 1e-4)) for v in shared if v in anchors]
            rest = inter
            for disk in allowed:
                rest = rest.difference(disk)
            if not rest.is_empty:
                p = rest.representative_point()
                bad.append((a, b, complex(p.x, p.y)))
                if len(bad) >= limit:
                    return bad
    return bad


def _faces_of(loc: FaceLocator, pts) -> set:
    return {loc(z) for z in pts}


def validate_extended(ext: ExtendedNewtonGraph, tol: float = HAUSDORFF_TOL) -> ValidationReport:
    """The nine conditions on an extended Newton graph, checked on the constructed data."""
    nmap, sigma, N = ext.nmap, ext.graph, ext.level
    g = ext.builder.level(N).graph
    d = len(nmap.roots)
    rep = ValidationReport(f"extended Newton graph (level {N})")
    # 1: typing and planarity
    kinds_ok = all(e.etype in ("N", "H", "R") for e in sigma.edges.values())
    crosses = crossing_violations(sigma)
    w = f"{len(crosses)} crossings, first {crosses[0][:2]} at {crosses[0][2]:.6g}" if crosses else ""
    rep.add(1, kinds_ok and not crosses, w if crosses else ("untyped edges" if not kinds_ok else ""))
    # 2: minimal level with trees separated
    anchors = [t.spec.tree.vertices[next(iter(t.spec.tree.vertices))].anchor for t in ext.trees]
    lev = ext.builder.level(N)
    is_newton = validate_abstract_newton_graph(lev.graph, lev.self_map(), N, lev.delta_edges).verdict
    sep = len(_faces_of(FaceLocator(g), anchors)) == len(anchors)
    lower = []
    for n in range(1, N):
        ln = ext.builder.level(n)
        ok_n = validate_abstract_newton_graph(ln.graph, ln.self_map(), n, ln.delta_edges).verdict
        if ok_n and len(_faces_of(FaceLocator(ln.graph), anchors)) == len(anchors) and all(
            any(abs(v.anchor - c) < 1e-6 for v in ln.graph.vertices.values() if v.anchor is not None)
            for c in eventually_fixed_critical_points(nmap)
        ):
            lower.append(n)
    rep.add(2, is_newton and sep and not lower,
            f"abstract Newton graph {is_newton}, trees separated {sep}, smaller valid levels {lower}")
    # 3: periodic trees
    bad3 = []
    gidx = PolylineIndex([e.trace for e in g.edges.values()], 1e-3)
    for t in ext.trees:
        trep = validate_abstract_extended_hubbard_tree(t.spec)
        if not trep.verdict:
            bad3.append(f"tree {t.index}: {trep.first_failure().cid}")
        pts = np.concatenate([e.trace for e in t.spec.tree.edges.values()] or [np.array([v.anchor for v in t.spec.tree.vertices.values()])])
        if np.min(gidx.distance(pts)) < tol:
            bad3.append(f"tree {t.index} meets the Newton graph")
        per = t.spec.plm.domain.piece_period if t.spec.plm is not None else None
        if per is not None and per < 2:
            bad3.append(f"tree {t.index} has period {per}")
    rep.add(3, not bad3, "; ".join(bad3))
    # 4: preperiodic trees
    rep.add(4, PASS, "no preperiodic trees are included")
    # 5: distinct faces
    loc = FaceLocator(g)
    faces = []
    bad5 = []
    for t in ext.trees:
        fs = _faces_of(loc, [v.anchor for v in t.tree.vertices.values()])
        if len(fs) != 1:
            bad5.append(f"tree {t.index} spans faces {sorted(fs)}")
        faces.append(min(fs))
    if len(set(faces)) != len(faces):
        bad5.append(f"trees share faces {faces}")
    rep.add(5, not bad5, "; ".join(bad5))
    # 6: one periodic ray per periodic tree landing at a repelling fixed point of the return map
    bad6 = []
    ratios = {}
    for t in ext.trees:
        here = [r for r in ext.rays if _tree_vertex_at([t], r.landing) is not None]
        if len(here) != 1:
            bad6.append(f"tree {t.index} carries {len(here)} periodic rays")
            continue
        r = here[0]
        m = t.spec.plm.m if t.spec.plm is not None else 1
        Fz, dF = iterate_with_derivative(nmap, np.array([r.landing]), m)
        if abs(Fz[0] - r.landing) > 1e-8 or abs(dF[0]) <= 1:
            bad6.append(f"ray {r.id} lands at a point that is not a repelling fixed point of N^{m}")
        if r.period % m:
            bad6.append(f"ray period {r.period} is not a multiple of {m}")
        ratios[t.index] = r.period // m
    rep.add(6, not bad6, "; ".join(bad6))
    rep.data["ray_ratios"] = ratios
    # 7: preperiodic rays map onto periodic rays after one step
    bad7 = []
    by_id = {r.id: r for r in ext.rays}
    for a in ext.aux_rays:
        target = by_id[a.meta["image"][1]]
        res = forward_image_test(nmap, a, 1, g, tol, target=target)
        if not res["ok"]:
            bad7.append(f"{a.id}: image is {res['hausdorff']:.2e} from {target.id}")
        if abs(complex(nmap(a.landing)) - a.landing) < 1e-8 or any(abs(r.landing - a.landing) < 1e-8 for r in ext.rays):
            bad7.append(f"{a.id} lands at a periodic landing point")
    rep.add(7, not bad7, "; ".join(bad7) if bad7 else f"{len(ext.aux_rays)} preperiodic rays")
    # 8: regular extension
    try:
        promoted = promote_weak_map(ext.map)
        rext = check_regular_extension(promoted)
        ok8 = rext.verdict
        w8 = "" if ok8 else f"{rext.first_failure().cid}: {rext.first_failure().witness}"
        degrees = rext.data.get("local_degrees", {})
    except Exception as exc:  # promotion can fail on folding edges
        ok8, w8, degrees = False, f"{type(exc).__name__}: {exc}", {}
    rep.add(8, ok8, w8)
    # 9: critical count
    if degrees:
        total = sum(k - 1 for k in degrees.values())
        rep.add(9, total == 2 * d - 2, f"sum of (local degree - 1) = {total}, expected {2 * d - 2}")
        rep.data["critical_vertices"] = sorted(v for v, k in degrees.items() if k > 1)
    else:
        rep.add(9, INDETERMINATE, "local degrees unavailable")
    return rep


def validate_extended_json(data: dict) -> ValidationReport:
    """The conditions of an extended Newton graph that can be read off its JSON form.

    Conditions needing the Newton map itself (level minimality, tree and ray
    geometry) are reported unchecked; the pipeline checks them on live data.
    """
    sigma = PlanarGraph.from_json(data)
    maps = data.get("maps") or []
    d = int(data.get("degree", len(data.get("roots", [])) or 0))
    rep = ValidationReport(f"extended Newton graph (level {data.get('level')}, from JSON)")
    kinds_ok = all(e.etype in ("N", "H", "R") for e in sigma.edges.values())
    crosses = crossing_violations(sigma)
    w = f"{len(crosses)} crossings, first {crosses[0][:2]} at {crosses[0][2]:.6g}" if crosses else ""
    rep.add(1, kinds_ok and not crosses, w if crosses else ("untyped edges" if not kinds_ok else ""))
    for c in range(2, 8):
        rep.add(c, UNCHECKED, "needs the Newton map")
    if not maps:
        rep.add(8, FAIL, "no graph map in the file")
        return rep
    f = graph_map_from_json(sigma, sigma, maps[0])
    bad = f.check_edges()
    if bad:
        rep.add(8, FAIL, f"edge images do not match vertex images: {bad[:4]}")
        return rep
    try:
        rext = check_regular_extension(promote_weak_map(f))
        ok8 = rext.verdict
        w8 = "" if ok8 else f"{rext.first_failure().cid}: {rext.first_failure().witness}"
        degrees = rext.data.get("local_degrees", {})
    except Exception as exc:
        ok8, w8, degrees = False, f"{type(exc).__name__}: {exc}", {}
    rep.add(8, ok8, w8)
    if degrees and d:
        total = sum(k - 1 for k in degrees.values())
        rep.add(9, total == 2 * d - 2, f"sum of (local degree - 1) = {total}, expected {2 * d - 2}")
    else:
        rep.add(9, INDETERMINATE, "local degrees or degree unavailable")
    return rep


def edge_dynamics(ext: ExtendedNewtonGraph, tol: float = HAUSDORFF_TOL) -> ValidationReport:
    """Type-preserving edge dynamics: Newton edges to Newton edges, tree edges to tree paths, rays to rays."""
    rep = ValidationReport("edge dynamics")
    sigma, f = ext.graph, ext.map
    bad = list(f.check_edges())
    for e, path in f.edge_map.items():
        t = sigma.edges[e].etype
        types = [sigma.edges[x].etype for x, _ in path]
        if t == "N" and set(types) != {"N"}:
            bad.append(e)
        elif t == "H" and set(types) != {"H"}:
            bad.append(e)
        elif t == "R" and (types[-1] != "R" or set(types[:-1]) - {"N"}):
            bad.append(e)
    rep.add("types", not bad, f"edges {bad[:5]}" if bad else "")
    g = ext.builder.level(ext.level).graph
    worst = 0.0
    for r in ext.rays:
        nxt = f.edge_map[r.id][-1][0]
        target = next(q for q in ext.rays if q.id == nxt)
        res = forward_image_test(ext.nmap, r, 1, g, tol, target=target)
        worst = max(worst, res["hausdorff"])
    rep.add("ray-images", worst < tol, f"max Hausdorff {worst:.2e}")
    return rep


def same_after_deleting_rays(a: ExtendedNewtonGraph, b: ExtendedNewtonGraph) -> bool:
    """True when the two graphs agree once every ray edge is removed."""
    ga, gb = a.strip_rays(), b.strip_rays()
    return json.dumps(ga.to_json(), sort_keys=True) == json.dumps(gb.to_json(), sort_keys=True)


# ---------------------------------------------------------------------------
# pipeline


def check_postcritically_finite(nmap, max_iter: int = 400) -> dict:
    """Classify every free critical orbit; raise when one is not finite."""
    out = {}
    landed = eventually_fixed_critical_points(nmap)
    for c in critical_points(nmap).free:
        if any(abs(c - q) < 1e-12 for q in landed):
            out[complex(c)] = "eventually fixed"
            continue
        res = orbit(nmap, c, max_iter=max_iter)
        if isinstance(res, CycleInfo) and res.period >= 2 and res.multiplier_modulus < 1e-4:
            out[complex(c)] = f"superattracting cycle of period {res.period}"
            continue
        raise NoConvergence(f"critical orbit of {complex(c):.6g} is not postcritically finite")
    return out


def ensure_postcritically_finite(nmap, max_iter: int = 400):
    """Return ``(map, info)`` with every free critical orbit finite.

    Approximate roots are repaired with ``refine_pcf`` when each free critical
    point not already eventually fixed sits near a superattracting cycle;
    anything else raises ``NoConvergence``.
    """
    try:
        return nmap, {"refined": False, "orbits": check_postcritically_finite(nmap, max_iter)}
    except NoConvergence:
        pass
    landed = eventually_fixed_critical_points(nmap)
    targets = []
    for c in critical_points(nmap).free:
        if any(abs(c - q) < 1e-12 for q in landed):
            continue
        res = orbit(nmap, c, max_iter=max_iter, tolerance=LOOSE_CYCLE_TOL)
        if not isinstance(res, CycleInfo) or res.period < 2:
            raise NoConvergence(f"refine_pcf: critical orbit of {complex(c):.6g} has no periodic target")
        targets.append((complex(c), res.period, 0))
    roots = refine_pcf(nmap, targets)
    refined = NewtonMap(roots)
    return refined, {"refined": True, "targets": [[t[1], t[2]] for t in targets],
                     "orbits": check_postcritically_finite(refined, max_iter)}


def end_to_end(roots, seed: int = 0, max_level: int = 6, log=None) -> ExtendedNewtonGraph:
    """Roots to a validated extended Newton graph."""
    t0 = time.time()
    say = log or (lambda msg: None)
    nmap = roots if isinstance(roots, NewtonMap) else NewtonMap(np.asarray(roots, dtype=complex))
    head = verify_head(nmap)
    if not head.verdict:
        raise NoConvergence(f"not a Newton map: {head.first_failure().witness}")
    pcf = check_postcritically_finite(nmap)
    builder = NewtonGraphBuilder(nmap)
    pts = periodic_postcritical(nmap)
    if not pts:
        level, info = select_level(nmap, [], builder, max_level)
        ext = assemble_extended(nmap, builder, level, [], [], seed, [])
        ext.info.update(pcf={str(k): v for k, v in pcf.items()}, level_info=info)
        return ext
    groups = group_pieces(pts, FaceLocator(builder.level(GROUP_LEVEL).graph))
    level, info = select_level(nmap, [grp[0].point for grp in groups], builder, max_level)
    say(f"level {level} ({time.time() - t0:.1f}s)")
    domains = find_renorm_domains(nmap, builder.level(level).graph, level, groups)
    specs = []
    for dom in domains:
        plm = thicken(nmap, dom, check=False)
        specs.append(build_hubbard_tree(plm))
        say(f"tree {dom.index} ({time.time() - t0:.1f}s)")
    ext = assemble_extended(nmap, builder, level, specs, domains, seed)
    ext.info.update(pcf={str(k): v for k, v in pcf.items()}, level_info=info)
    say(f"assembled ({time.time() - t0:.1f}s)")
    return ext
