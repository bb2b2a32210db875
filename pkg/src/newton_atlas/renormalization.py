"""Renormalization domains, polynomial-like restrictions and their filled Julia sets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .basins import NON_CONVERGING, Viewport, render_basins
from .core import CYCLE_TOL, LOOSE_CYCLE_TOL, CycleInfo, critical_points, orbit
from .errors import (
    BoundaryThroughCriticalValue,
    BudgetExceeded,
    EpsilonTooLarge,
    MaskDisconnected,
    SkeletonAmbiguous,
)
from .planar import PlanarGraph, face_polygon, winding_number
from .report import UNCHECKED, ValidationReport

MAX_GROW = 6
DEFAULT_RES = 600


# ---------------------------------------------------------------------------
# periodic postcritical points and their pieces


@dataclass
class PeriodicPoint:
    point: complex
    period: int
    critical: complex  # the critical point whose orbit contains it
    offset: int  # point = N^offset(critical)


def periodic_postcritical(nmap, max_iter: int = 400) -> list:
    """Non-fixed periodic points on free critical orbits, one entry per cycle point."""
    out = []
    for c in critical_points(nmap).free:
        res = orbit(nmap, c, max_iter=max_iter, tolerance=CYCLE_TOL)
        if not isinstance(res, CycleInfo):
            res = orbit(nmap, c, max_iter=max_iter, tolerance=LOOSE_CYCLE_TOL)
        if not isinstance(res, CycleInfo) or res.period < 2:
            continue
        for k, z in enumerate(res.points):
            if any(abs(z - p.point) < 1e-6 for p in out):
                continue
            out.append(PeriodicPoint(complex(z), res.period, complex(c), res.preperiod + k))
    return out


class FaceLocator:
    """Point location among the faces of an embedded graph."""

    def __init__(self, g: PlanarGraph):
        self.graph = g
        self.faces = g.faces()
        self.polys = [face_polygon(g, f) for f in self.faces]
        self.areas = [abs(0.5 * np.sum((np.conj(p) * np.roll(p, -1)).imag)) for p in self.polys]

    def __call__(self, z: complex) -> int:
        best, best_area = None, np.inf
        for f, poly, area in zip(self.faces, self.polys, self.areas):
            if round(winding_number(poly, z)) != 0 and area < best_area:
                best, best_area = f.id, area
        return best

    def face(self, fid: int):
        return self.faces[fid]

    def polygon(self, fid: int) -> np.ndarray:
        return self.polys[fid]


def group_pieces(points: list, locator: FaceLocator) -> list:
    """Group periodic postcritical points sharing a face of a deep Newton graph.

    Each group is one little filled Julia set.  Groups are ordered by the
    position of their first point so the result is deterministic.
    """
    by_face = {}
    for p in points:
        by_face.setdefault(locator(p.point), []).append(p)
    groups = list(by_face.values())
    for grp in groups:
        grp.sort(key=lambda p: (p.offset, p.point.real, p.point.imag))
    groups.sort(key=lambda grp: (-grp[0].period, grp[0].point.real, grp[0].point.imag))
    return groups


def piece_period(nmap, groups: list, k: int) -> int:
    """Smallest j with N^j mapping group k's anchor back into group k."""
    z = groups[k][0].point
    members = [[p.point for p in grp] for grp in groups]
    for j in range(1, groups[k][0].period + 1):
        z = complex(nmap(z))
        hit = [i for i, pts in enumerate(members) if min(abs(np.array(pts) - z)) < 1e-6]
        if hit and hit[0] == k:
            return j
    return groups[k][0].period


# ---------------------------------------------------------------------------
# domains


@dataclass
class RenormDomain:
    index: int
    period: int  # m(k): the iterate N^m used on this domain
    piece_period: int
    level: int  # the range is a face of the Newton graph at this level
    anchor: complex
    points: list  # periodic postcritical points inside
    face: int  # face id of the range in the level graph
    boundary_darts: list
    boundary: np.ndarray  # closed polyline of the range face
    graph: PlanarGraph = field(repr=False, default=None)

    @property
    def domain_level(self) -> int:
        return self.level + self.period

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "period": self.period,
            "piece_period": self.piece_period,
            "range_level": self.level,
            "domain_level": self.domain_level,
            "anchor": [self.anchor.real, self.anchor.imag],
            "points": [[p.point.real, p.point.imag] for p in self.points],
            "range_face": [f"{e}:{s}" for e, s in self.boundary_darts],
        }


def find_renorm_domains(nmap, graph: PlanarGraph, level: int, groups: list, max_period: int = 64) -> list:
    """One domain per little filled Julia set.

    The range is the face of ``graph`` (the Newton graph at ``level``)
    holding the group's anchor, and the iterate is the smallest multiple of
    the piece period that is at least ``level``.  The domain itself is the
    component of the preimage of the range containing the anchor; it is
    computed on pixels by :func:`thicken`.
    """
    loc = FaceLocator(graph)
    out = []
    for k, grp in enumerate(groups):
        q = piece_period(nmap, groups, k)
        m = q * max(1, -(-level // q))
        if m > max_period:
            raise BudgetExceeded(f"iterate {m} exceeds the cap {max_period}")
        fid = loc(grp[0].point)
        face = loc.face(fid)
        out.append(
            RenormDomain(k, m, q, level, grp[0].point, list(grp), fid, list(face.darts), loc.polygon(fid), graph)
        )
    return out


# ---------------------------------------------------------------------------
# rasterization helpers


def rasterize_edges(g: PlanarGraph, vp: Viewport) -> np.ndarray:
    """Boolean image of every edge trace, segments clipped to the viewport."""
    ny, nx = vp.shape
    img = Image.new("1", (nx, ny), 0)
    draw = ImageDraw.Draw(img)
    lo = np.array([-2.0, -2.0])
    hi = np.array([ny + 1.0, nx + 1.0])
    for e in g.edges.values():
        tr = e.trace
        if tr is None or len(tr) < 2:
            continue
        tr = tr[np.isfinite(tr)]
        r, c = vp.to_pixel(tr)
        p0 = np.column_stack([r[:-1], c[:-1]])
        p1 = np.column_stack([r[1:], c[1:]])
        seg_lo = np.minimum(p0, p1)
        seg_hi = np.maximum(p0, p1)
        keep = np.all(seg_hi >= lo, axis=1) & np.all(seg_lo <= hi, axis=1)
        for a, b in zip(p0[keep], p1[keep]):
            clipped = _clip(a, b, lo, hi)
            if clipped is not None:
                (r0, c0), (r1, c1) = clipped
                draw.line([(c0, r0), (c1, r1)], fill=1, width=1)
    return np.array(img, dtype=bool)


def _clip(a, b, lo, hi):
    """Liang-Barsky clipping of segment ``ab`` to the box ``[lo, hi]``."""
    t0, t1 = 0.0, 1.0
    d = b - a
    for k in range(2):
        for p, q in ((-d[k], a[k] - lo[k]), (d[k], hi[k] - a[k])):
            if p == 0:
                if q < 0:
                    return None
                continue
            t = q / p
            if p < 0:
                t0 = max(t0, t)
            else:
                t1 = min(t1, t)
    if t0 > t1:
        return None
    return a + t0 * d, a + t1 * d


def lookup(mask: np.ndarray, vp: Viewport, z) -> np.ndarray:
    """Mask value at the pixel holding each point; False off the viewport."""
    r, c = vp.to_pixel(z)
    ny, nx = mask.shape
    ok = np.isfinite(r) & np.isfinite(c)
    ri = np.where(ok, np.rint(np.where(ok, r, 0)), -1).astype(np.int64)
    ci = np.where(ok, np.rint(np.where(ok, c, 0)), -1).astype(np.int64)
    inside = (ri >= 0) & (ri < ny) & (ci >= 0) & (ci < nx)
    out = np.zeros(np.shape(z), dtype=bool)
    out[inside] = mask[ri[inside], ci[inside]]
    return out


def component_at(mask: np.ndarray, vp: Viewport, z: complex, connectivity: int = 2) -> np.ndarray:
    structure = ndimage.generate_binary_structure(2, connectivity)
    lab, _ = ndimage.label(mask, structure=structure)
    r, c = vp.to_pixel(z)
    ri, ci = int(round(float(r))), int(round(float(c)))
    ny, nx = mask.shape
    if not (0 <= ri < ny and 0 <= ci < nx):
        return np.zeros_like(mask)
    k = lab[ri, ci]
    if k == 0:
        # the point sits on a drawn line or just off the mask: nearest labelled pixel
        win = lab[max(ri - 2, 0) : ri + 3, max(ci - 2, 0) : ci + 3]
        vals = win[win > 0]
        if vals.size == 0:
            return np.zeros_like(mask)
        k = np.bincount(vals).argmax()
    return lab == k


def iterate(nmap, z, m: int):
    for _ in range(m):
        with np.errstate(all="ignore"):
            z = nmap(z)
    return z


# ---------------------------------------------------------------------------
# polynomial-like restrictions


@dataclass
class PolyLikeMap:
    domain: RenormDomain
    nmap: object = field(repr=False)
    eps: float
    viewport: Viewport
    range_mask: np.ndarray = field(repr=False)  # thickened range V^
    domain_mask: np.ndarray = field(repr=False)  # thickened domain U^
    julia_mask: np.ndarray = field(repr=False)  # filled Julia set estimate
    boundary: np.ndarray = field(repr=False)  # closed curve around U^
    degree: int = 0
    max_iter: int = 60

    @property
    def m(self) -> int:
        return self.domain.period

    def F(self, z):
        return iterate(self.nmap, z, self.m)

    def contains(self, z, dilate: int = 1) -> np.ndarray:
        mask = ndimage.binary_dilation(self.julia_mask, iterations=dilate) if dilate else self.julia_mask
        return lookup(mask, self.viewport, z)

    def to_json(self) -> dict:
        return {
            "domain": self.domain.to_json(),
            "eps": self.eps,
            "viewport": self.viewport.to_json(),
            "degree": self.degree,
            "julia_pixels": int(self.julia_mask.sum()),
        }


def default_eps(dom: RenormDomain) -> float:
    """A quarter of the distance from the postcritical points to the range boundary."""
    b = dom.boundary[np.isfinite(dom.boundary)]
    d = min(float(np.min(np.abs(b - p.point))) for p in dom.points)
    return 0.25 * d


def thicken(nmap, dom: RenormDomain, eps: float | None = None, res: int = DEFAULT_RES, max_iter: int = 60,
            check: bool = True) -> PolyLikeMap:
    """Build the polynomial-like restriction of ``N^m`` around ``dom``.

    The range is the face dilated by ``eps``; the domain is the component of
    its preimage containing the anchor.  The viewport grows until the
    domain stays clear of its edge.  With ``check`` the filled Julia set and
    degree are recomputed at ``eps/2`` and must agree.
    """
    eps = default_eps(dom) if eps is None else eps
    plm = _thicken_once(nmap, dom, eps, res, max_iter)
    if check:
        half = _thicken_once(nmap, dom, eps / 2, res, max_iter, viewport=plm.viewport)
        same_pc = all(plm.contains(p.point) == half.contains(p.point) for p in dom.points)
        if half.degree != plm.degree or not same_pc:
            raise EpsilonTooLarge(f"eps={eps:.3g}: degree {plm.degree} vs {half.degree} at eps/2")
    return plm


def _initial_viewport(dom: RenormDomain, res: int) -> Viewport:
    b = dom.boundary[np.isfinite(dom.boundary)]
    dist = float(np.min(np.abs(b - dom.anchor)))
    return Viewport(dom.anchor, 6 * dist, (res, res))


def _thicken_once(nmap, dom, eps, res, max_iter, viewport=None):
    vp = viewport or _initial_viewport(dom, res)
    for _ in range(MAX_GROW):
        walls = rasterize_edges(dom.graph, vp)
        face = component_at(~walls, vp, dom.anchor, connectivity=1)
        if not face.any():
            raise MaskDisconnected("anchor is not inside its face on this grid")
        grow = max(1, int(np.ceil(eps / vp.pixel)))
        vhat = ndimage.binary_dilation(face, iterations=grow)
        z = vp.coords()
        Fz = iterate(nmap, z, dom.period)
        pre = lookup(vhat, vp, Fz) & vhat
        uhat = component_at(pre, vp, dom.anchor, connectivity=1)
        if not _touches_edge(uhat):
            break
        vp = Viewport(vp.center, 2 * vp.width, vp.shape)
    else:
        raise BudgetExceeded("domain does not fit in the viewport")
    julia = _filled_julia(nmap, dom, vp, vhat, uhat, max_iter)
    boundary = _outer_contour(uhat, vp, dom.anchor)
    plm = PolyLikeMap(dom, nmap, eps, vp, vhat, uhat, julia, boundary, 0, max_iter)
    plm.degree = proper_degree(plm, strict=False)
    return plm


def _touches_edge(mask):
    return mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any()


def _filled_julia(nmap, dom, vp, vhat, uhat, max_iter):
    grid = render_basins(nmap, vp, max_iter=200)
    cand = uhat & (grid.labels == NON_CONVERGING)
    idx = np.nonzero(cand.ravel())[0]
    z = vp.coords().ravel()[idx]
    alive = np.ones(idx.size, dtype=bool)
    for _ in range(max_iter):
        z = iterate(nmap, z, dom.period)
        alive &= lookup(uhat, vp, z)
        if not alive.any():
            break
    mask = np.zeros(vp.shape, dtype=bool)
    mask.ravel()[idx[alive]] = True
    return mask


def filled_julia_estimate(plm: PolyLikeMap, res: int | None = None, max_iter: int | None = None,
                          viewport: Viewport | None = None) -> tuple:
    """Pixel mask of points whose iterates never leave the domain.

    Returns ``(mask, viewport)``; by default the map's own grid is reused.
    """
    vp = viewport or plm.viewport
    if res is not None:
        vp = Viewport(vp.center, vp.width, (res, res))
    max_iter = plm.max_iter if max_iter is None else max_iter
    if vp == plm.viewport:
        return plm.julia_mask if max_iter == plm.max_iter else _filled_julia(
            plm.nmap, plm.domain, vp, plm.range_mask, plm.domain_mask, max_iter), vp
    walls = rasterize_edges(plm.domain.graph, vp)
    face = component_at(~walls, vp, plm.domain.anchor, connectivity=1)
    vhat = ndimage.binary_dilation(face, iterations=max(1, int(np.ceil(plm.eps / vp.pixel))))
    pre = lookup(vhat, vp, plm.F(vp.coords())) & vhat
    uhat = component_at(pre, vp, plm.domain.anchor, connectivity=1)
    return _filled_julia(plm.nmap, plm.domain, vp, vhat, uhat, max_iter), vp


def julia_viewport(plm: PolyLikeMap, res: int = 800, margin: float = 0.15) -> Viewport:
    """Square viewport framing the filled Julia estimate."""
    rows, cols = np.nonzero(plm.julia_mask)
    if rows.size == 0:
        return Viewport(plm.domain.anchor, 8 * plm.viewport.pixel, (res, res))
    z = plm.viewport.coords()[rows, cols]
    lo = complex(z.real.min(), z.imag.min())
    hi = complex(z.real.max(), z.imag.max())
    width = max(hi.real - lo.real, hi.imag - lo.imag) * (1 + 2 * margin) + 4 * plm.viewport.pixel
    return Viewport(0.5 * (lo + hi), width, (res, res))


def _outer_contour(mask, vp, anchor):
    from skimage import measure

    padded = np.pad(mask.astype(float), 1)
    best, best_len = None, -1
    for cont in measure.find_contours(padded, 0.5):
        r, c = cont[:, 0] - 1, cont[:, 1] - 1
        h = vp.pixel
        z = (vp.center.real - vp.width / 2 + h * (c + 0.5)) + 1j * (vp.center.imag + h * vp.shape[0] / 2 - h * (r + 0.5))
        if abs(round(winding_number(z, anchor))) >= 1 and len(z) > best_len:
            best, best_len = z, len(z)
    if best is None:
        raise MaskDisconnected("no contour encloses the anchor")
    return best


def critical_values(nmap, m: int) -> np.ndarray:
    """Critical values of N^m (images of all critical points under N^1 ... N^m)."""
    crit = critical_points(nmap).points
    vals = []
    z = np.asarray(crit, dtype=complex)
    for _ in range(m):
        z = iterate(nmap, z, 1)
        vals.append(z.copy())
    return np.concatenate(vals)


def _image_curve(F, curve, target, max_rounds: int = 12):
    """Image of a closed curve under F, refined until steps are small next to ``target``."""
    z = np.append(curve, curve[0])
    w = F(z)
    for _ in range(max_rounds):
        dist = np.minimum(np.abs(w[:-1] - target), np.abs(w[1:] - target))
        step = np.abs(np.diff(w))
        bad = np.nonzero(step > 0.25 * dist)[0]
        if bad.size == 0:
            break
        mids = 0.5 * (z[bad] + z[bad + 1])
        z = np.insert(z, bad + 1, mids)
        w = np.insert(w, bad + 1, F(mids))
    return z, w


def proper_degree(plm: PolyLikeMap, base: complex | None = None, strict: bool = True) -> int:
    """Winding number of F(boundary of U^) around a point of the range."""
    base = plm.domain.anchor if base is None else base
    z, w = _image_curve(plm.F, plm.boundary, base)
    cv = critical_values(plm.nmap, plm.m)
    cv = cv[np.isfinite(cv)]
    near = lookup(plm.range_mask, plm.viewport, cv)
    if near.any():
        gap = min(float(np.min(np.abs(w - c))) for c in cv[near])
        if gap < 0.5 * plm.viewport.pixel and strict:
            raise BoundaryThroughCriticalValue(f"boundary image passes {gap:.2e} from a critical value")
    turns = round(winding_number(plm.boundary, plm.domain.anchor))
    return int(round(winding_number(w[:-1], base))) * int(np.sign(turns))


def count_preimages(plm: PolyLikeMap, w: complex) -> int:
    """Number of solutions of F(z) = w in the domain mask, by repeated inverse images."""
    pts = np.array([w], dtype=complex)
    for _ in range(plm.m):
        pts = np.concatenate([plm.nmap.preimages(np.array([p]))[0] for p in pts])
    return int(np.sum(lookup(plm.domain_mask, plm.viewport, pts)))


# ---------------------------------------------------------------------------
# extended Hubbard trees

CRITICAL = "critical"
POSTCRITICAL = "postcritical"
CYCLE_POINT = "cycle-point"
BRANCH = "branch"
MARKED_ROLES = (CRITICAL, POSTCRITICAL, CYCLE_POINT)


@dataclass
class HubbardTreeSpec:
    tree: PlanarGraph
    tree_map: object  # GraphMap of the tree into itself (edges to tree paths)
    degree: int
    cycle_type: int
    degenerate: bool = False
    plm: PolyLikeMap | None = field(default=None, repr=False)
    viewport: Viewport | None = None

    def to_json(self) -> dict:
        data = self.tree.to_json()
        data.update({"tree": True, "degree": self.degree, "cycle_type": self.cycle_type, "degenerate": self.degenerate})
        data["maps"] = [self.tree_map.to_json()]
        return data


def iterate_with_derivative(nmap, z, m: int):
    z = np.asarray(z, dtype=complex)
    dz = np.ones_like(z)
    for _ in range(m):
        dz = dz * nmap.derivative(z)
        z = nmap(z)
    return z, dz


def critical_points_of_iterate(plm: PolyLikeMap) -> list:
    """Critical points of F = N^m inside the domain with their local degrees."""
    crit = critical_points(plm.nmap)
    free = [(complex(c), int(k) + 1) for c, k, fx in zip(crit.points, crit.multiplicities, crit.is_fixed) if not fx]
    out = []
    for c, k in free:
        layer = np.array([c])
        for j in range(plm.m):
            inside = lookup(plm.domain_mask, plm.viewport, layer)
            for z in layer[inside]:
                out.append((complex(z), k))
            if j < plm.m - 1:
                layer = np.concatenate([plm.nmap.preimages(np.array([w]))[0] for w in layer])
    merged = []
    for z, k in out:
        for i, (w, kw) in enumerate(merged):
            if abs(w - z) < 1e-8:
                merged[i] = (w, kw * k)
                break
        else:
            merged.append((z, k))
    return merged


def fixed_points_of_iterate(plm: PolyLikeMap, seeds: int = 4000, tol: float = 1e-12) -> list:
    """Fixed points of F in the domain, by Newton's method from seeds on and near the filled Julia set.

    A fixed point in the domain never leaves it, so it belongs to the filled
    Julia set even when the pixel estimate misses it.
    """
    rows, cols = np.nonzero(ndimage.binary_dilation(plm.julia_mask, iterations=3))
    step = max(1, rows.size // seeds)
    z = plm.viewport.coords()[rows[::step], cols[::step]]
    for _ in range(80):
        w, dw = iterate_with_derivative(plm.nmap, z, plm.m)
        with np.errstate(all="ignore"):
            dz = (w - z) / (dw - 1)
        z = z - dz
        ok = np.isfinite(z)
        z = z[ok]
        if np.all(np.abs(dz[ok]) < tol * (1 + np.abs(z))):
            break
    w = iterate(plm.nmap, z, plm.m)
    good = np.abs(w - z) < 1e-9
    off_roots = np.min(np.abs(z[:, None] - plm.nmap.roots[None, :]), axis=1) > 1e-6
    z = z[good & off_roots & lookup(plm.domain_mask, plm.viewport, z)]
    found = []
    for p in z:
        if all(abs(p - q) > 1e-7 for q in found):
            found.append(complex(p))
    found.sort(key=lambda q: (q.real, q.imag))
    return found


def marked_points(plm: PolyLikeMap, cycle_type: int = 1) -> list:
    """Marked set: critical and postcritical points of F in the domain plus its cycles up to ``cycle_type``."""
    pts = []

    def add(z, role, local_degree=1):
        for p in pts:
            if abs(p["z"] - z) < 1e-7:
                if role == CRITICAL:
                    p["role"], p["local_degree"] = CRITICAL, local_degree
                elif p["role"] == CYCLE_POINT and role == POSTCRITICAL:
                    p["role"] = POSTCRITICAL
                return
        pts.append({"z": complex(z), "role": role, "local_degree": local_degree})

    crit = critical_points_of_iterate(plm)
    for c, k in crit:
        add(c, CRITICAL, k)
    for c, _ in crit:
        z = c
        for _ in range(64):
            z = complex(plm.F(z))
            if any(abs(p["z"] - z) < 1e-7 and p["role"] != CRITICAL for p in pts):
                break
            add(z, POSTCRITICAL)
    for n in range(1, cycle_type + 1):
        if n == 1:
            cyc = fixed_points_of_iterate(plm)
        else:
            raise NotImplementedError("only cycle type one is built from the mask")
        for z in cyc:
            add(z, CYCLE_POINT)
    return pts


def _tree_mask(plm: PolyLikeMap, vp: Viewport, pts) -> np.ndarray:
    mask, _ = filled_julia_estimate(plm, viewport=vp)
    r, c = vp.to_pixel(np.array([p["z"] for p in pts]))
    ri, ci = np.rint(r).astype(int), np.rint(c).astype(int)
    mask = mask.copy()
    mask[ri, ci] = True
    structure = ndimage.generate_binary_structure(2, 2)
    for grow in range(0, 6):
        m = ndimage.binary_dilation(mask, iterations=grow) if grow else mask
        lab, _ = ndimage.label(m, structure=structure)
        ids = set(lab[ri, ci])
        if len(ids) == 1 and 0 not in ids:
            return m
    raise MaskDisconnected("marked points are not in one component of the filled Julia estimate")


def _skeleton_tree(mask, seeds):
    """Union of shortest skeleton paths from the first seed pixel to the others."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import dijkstra
    from skimage.morphology import skeletonize

    skel = skeletonize(mask)
    for (r, c) in seeds:
        skel[r, c] = True
    # join every seed to the nearest skeleton pixel of its own component
    sk_r, sk_c = np.nonzero(skel)
    for (r, c) in seeds:
        d2 = (sk_r - r) ** 2 + (sk_c - c) ** 2
        d2[d2 == 0] = 1 << 40
        j = int(np.argmin(d2))
        n = int(max(abs(sk_r[j] - r), abs(sk_c[j] - c)))
        for t in np.linspace(0, 1, n + 1):
            skel[int(round(r + t * (sk_r[j] - r))), int(round(c + t * (sk_c[j] - c)))] = True
    rr, cc = np.nonzero(skel)
    index = -np.ones(skel.shape, dtype=np.int64)
    index[rr, cc] = np.arange(rr.size)
    src, dst, wts = [], [], []
    for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
        r2, c2 = rr + dr, cc + dc
        ok = (r2 >= 0) & (r2 < skel.shape[0]) & (c2 >= 0) & (c2 < skel.shape[1])
        ok[ok] &= skel[r2[ok], c2[ok]]
        src.append(index[rr[ok], cc[ok]])
        dst.append(index[r2[ok], c2[ok]])
        wts.append(np.full(ok.sum(), np.hypot(dr, dc)))
    src, dst, wts = np.concatenate(src), np.concatenate(dst), np.concatenate(wts)
    graph = coo_matrix((np.concatenate([wts, wts]), (np.concatenate([src, dst]), np.concatenate([dst, src]))),
                       shape=(rr.size, rr.size)).tocsr()
    seed_idx = [int(index[r, c]) for r, c in seeds]
    dist, pred = dijkstra(graph, indices=seed_idx[0], return_predecessors=True)
    used = set()
    parent = {}
    for s in seed_idx[1:]:
        if not np.isfinite(dist[s]):
            raise MaskDisconnected("skeleton does not join the marked points")
        k = s
        while k != seed_idx[0] and k not in used:
            used.add(k)
            parent[k] = int(pred[k])
            k = int(pred[k])
    used.add(seed_idx[0])
    coords = np.column_stack([rr, cc])
    return used, parent, coords, seed_idx


def build_hubbard_tree(plm: PolyLikeMap, cycle_type: int = 1, res: int = 800, merge_px: float = 3.0) -> HubbardTreeSpec:
    """Extended Hubbard tree of the polynomial-like map as a planar tree with its dynamics."""
    from .planar import GraphMap, set_rotations_from_geometry

    pts = marked_points(plm, cycle_type)
    tree = PlanarGraph({"kind": "hubbard-tree", "tree": True, "domain": plm.domain.index, "period": plm.m})
    if plm.degree == 1:
        z = plm.domain.anchor
        tree.add_vertex("h0", kind="julia", anchor=z, role=CYCLE_POINT, local_degree=1)
        f = GraphMap(tree, tree, {"h0": "h0"}, {})
        return HubbardTreeSpec(tree, f, 1, 1, True, plm, plm.viewport)
    vp = julia_viewport(plm, res)
    mask = _tree_mask(plm, vp, pts)
    r, c = vp.to_pixel(np.array([p["z"] for p in pts]))
    seeds = [(int(round(a)), int(round(b))) for a, b in zip(r, c)]
    used, parent, coords, seed_idx = _skeleton_tree(mask, seeds)
    # neighbours inside the path union
    nbrs = {k: set() for k in used}
    for k, p in parent.items():
        nbrs[k].add(p)
        nbrs[p].add(k)
    vertex_of = {}
    for i, s in enumerate(seed_idx):
        vertex_of.setdefault(s, i)
    branch = [k for k in used if len(nbrs[k]) >= 3 and k not in vertex_of]
    # merge nearby branch pixels and snap those next to marked points
    clusters = []
    for k in branch:
        for cl in clusters:
            if np.min(np.hypot(*(coords[cl] - coords[k]).T)) <= merge_px:
                cl.append(k)
                break
        else:
            clusters.append([k])
    vertices = [dict(p) for p in pts]
    for cl in clusters:
        near = [vertex_of[s] for s in seed_idx if np.min(np.hypot(*(coords[cl] - coords[s]).T)) <= merge_px]
        if near:
            for k in cl:
                vertex_of[k] = near[0]
            continue
        rc = coords[cl].mean(axis=0)
        zc = complex(vp.coords()[int(round(rc[0])), int(round(rc[1]))])
        vertices.append({"z": zc, "role": BRANCH, "local_degree": 1})
        for k in cl:
            vertex_of[k] = len(vertices) - 1
    h = vp.pixel
    to_z = lambda k: complex(vp.coords()[coords[k][0], coords[k][1]])
    for i, v in enumerate(vertices):
        kind = "fatou" if _in_superattracting_cycle(plm, v["z"]) else "julia"
        tree.add_vertex(f"h{i}", kind=kind, anchor=v["z"], role=v["role"], local_degree=v["local_degree"])
    # walk the pixel tree between vertices
    edges = []
    seen = set()
    for start in sorted(set(vertex_of.values())):
        for k0 in [k for k in used if vertex_of.get(k) == start]:
            for n0 in nbrs[k0]:
                if vertex_of.get(n0) == start or (k0, n0) in seen:
                    continue
                path = [k0, n0]
                prev, cur = k0, n0
                while cur not in vertex_of:
                    nxt = [q for q in nbrs[cur] if q != prev]
                    if len(nxt) != 1:
                        raise SkeletonAmbiguous("pixel tree branches away from a vertex")
                    prev, cur = cur, nxt[0]
                    path.append(cur)
                seen.add((k0, n0))
                seen.add((path[-1], path[-2]))
                end = vertex_of[cur]
                if end == start:
                    continue
                edges.append((start, end, path))
    for j, (a, b, path) in enumerate(sorted(edges, key=lambda t: (t[0], t[1], len(t[2])))):
        tr = np.array([to_z(k) for k in path], dtype=complex)
        tr[0], tr[-1] = vertices[a]["z"], vertices[b]["z"]
        tree.add_edge(f"t{j}", f"h{a}", f"h{b}", trace=tr, etype="H")
    if len(tree.edges) != len(tree.vertices) - 1 or not tree.is_connected():
        raise SkeletonAmbiguous(f"extracted graph is not a tree ({len(tree.vertices)} vertices, {len(tree.edges)} edges)")
    set_rotations_from_geometry(tree)
    f = _tree_dynamics(plm, tree, tol=4 * h)
    return HubbardTreeSpec(tree, f, plm.degree, cycle_type, False, plm, vp)


def _in_superattracting_cycle(plm, z, max_steps: int = 64):
    """True when the F-orbit of z falls on a cycle through a critical point."""
    orbit_pts = [complex(z)]
    for _ in range(max_steps):
        w = complex(plm.F(orbit_pts[-1]))
        hit = [i for i, q in enumerate(orbit_pts) if abs(q - w) < 1e-7]
        if hit:
            cyc = np.array(orbit_pts[hit[0]:])
            _, dz = iterate_with_derivative(plm.nmap, cyc, plm.m)
            return bool(abs(np.prod(dz)) < 1e-6)
        orbit_pts.append(w)
    return False


def tree_path(tree: PlanarGraph, a: str, b: str) -> list:
    """Unique path from a to b as oriented edges."""
    if a == b:
        return []
    prev = {a: None}
    queue = [a]
    while queue:
        v = queue.pop(0)
        for d in tree.rotations[v]:
            e = tree.edges[d[0]]
            w = e.ends[1] if d[1] == 0 else e.ends[0]
            if w not in prev:
                prev[w] = (v, d[0], 1 if d[1] == 0 else -1)
                queue.append(w)
    path = []
    v = b
    while prev[v] is not None:
        u, e, o = prev[v]
        path.append((e, o))
        v = u
    return path[::-1]


def _tree_dynamics(plm, tree, tol):
    from .planar import GraphMap

    ids = list(tree.vertices)
    anchors = np.array([tree.vertices[v].anchor for v in ids])
    vmap = {}
    for v in ids:
        w = complex(plm.F(tree.vertices[v].anchor))
        d = np.abs(anchors - w)
        j = int(np.argmin(d))
        exact = tree.vertices[v].data["role"] != BRANCH and tree.vertices[ids[j]].data["role"] != BRANCH
        if d[j] > (1e-6 if exact else tol):
            raise SkeletonAmbiguous(f"image of {v} at {w:.6g} is not a tree vertex (nearest {d[j]:.2e})")
        vmap[v] = ids[j]
    emap = {}
    for e in tree.edges.values():
        emap[e.id] = tree_path(tree, vmap[e.ends[0]], vmap[e.ends[1]])
        if not emap[e.id]:
            raise SkeletonAmbiguous(f"edge {e.id} collapses under the map")
    return GraphMap(tree, tree, vmap, emap, plm.F)


def _tree_iterate(vmap: dict, v: str, k: int) -> str:
    for _ in range(k):
        v = vmap[v]
    return v


def validate_abstract_extended_hubbard_tree(t: HubbardTreeSpec) -> ValidationReport:
    """Check the combinatorial conditions of an extended Hubbard tree."""
    rep = ValidationReport(f"extended Hubbard tree (degree {t.degree}, cycle type {t.cycle_type})")
    g, f = t.tree, t.tree_map
    nv, ne = len(g.vertices), len(g.edges)
    rep.add("tree", ne == nv - 1 and g.is_connected(), f"{nv} vertices, {ne} edges")
    if t.degenerate:
        ok = nv == 1 and all(f.vertex_map[v] == v for v in g.vertices) and t.degree == 1
        rep.add("degenerate", ok, "single vertex mapped to itself")
    inv_bad = [v for v in g.vertices if f.vertex_map.get(v) not in g.vertices]
    inv_bad += [e for e in f.check_edges()]
    rep.add("invariant", not inv_bad, f"not mapped into the tree: {inv_bad[:4]}" if inv_bad else "")
    total = sum(int(v.data.get("local_degree", 1)) - 1 for v in g.vertices.values())
    rep.add("local-degrees", total == t.degree - 1, f"sum of (deg-1) = {total}, expected {t.degree - 1}")
    counts = {}
    for k in range(1, t.cycle_type + 1):
        counts[k] = sum(1 for v in g.vertices if _tree_iterate(f.vertex_map, v, k) == v)
    bad_counts = {k: c for k, c in counts.items() if c != t.degree**k}
    rep.add(
        "cycles",
        not bad_counts,
        "; ".join(f"{c} points of period dividing {k}, expected {t.degree**k}" for k, c in bad_counts.items()),
    )
    leaves = [v for v in g.vertices if g.valence(v) <= 1]
    unmarked = [v for v in leaves if g.vertices[v].data.get("role") not in MARKED_ROLES]
    rep.add("minimal", not unmarked, f"unmarked endpoints {unmarked}" if unmarked else "")
    rep.add("expansive", UNCHECKED, "angle and expansivity axioms are not checked")
    rep.data["cycle_counts"] = counts
    return rep
