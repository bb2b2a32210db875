"""Basins of the roots, bubbles, fixed internal rays and the channel diagram."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial
from scipy import ndimage

from .core import chordal, critical_points
from .errors import NumericError, ResolutionTooCoarse, TraceStalled
from .planar import FATOU, INFINITY, PlanarGraph, set_rotations_from_geometry
from .pullback import pull_back_branch, trace_invariant_curve

NON_CONVERGING = -1
ROOT_TOL = 1e-6
RAY_STOP = 2e6  # chordal distance to infinity below 1e-6


# ---------------------------------------------------------------------------
# viewports and grids


@dataclass(frozen=True)
class Viewport:
    center: complex
    width: float
    shape: tuple  # (rows, cols)

    @classmethod
    def parse(cls, text: str, res: int) -> "Viewport":
        cx, cy, w = (float(t) for t in text.split(","))
        return cls(complex(cx, cy), w, (res, res))

    @property
    def pixel(self) -> float:
        return self.width / self.shape[1]

    def coords(self) -> np.ndarray:
        ny, nx = self.shape
        h = self.pixel
        height = h * ny
        x = self.center.real - self.width / 2 + h * (np.arange(nx) + 0.5)
        y = self.center.imag + height / 2 - h * (np.arange(ny) + 0.5)
        return x[None, :] + 1j * y[:, None]

    def to_pixel(self, z):
        z = np.asarray(z, dtype=complex)
        ny, nx = self.shape
        h = self.pixel
        col = (z.real - (self.center.real - self.width / 2)) / h - 0.5
        row = ((self.center.imag + h * ny / 2) - z.imag) / h - 0.5
        return row, col

    def to_json(self) -> dict:
        return {"center": [self.center.real, self.center.imag], "width": self.width, "shape": list(self.shape)}


@dataclass
class BasinGrid:
    viewport: Viewport
    labels: np.ndarray  # int16, root index or NON_CONVERGING
    iterations: np.ndarray  # uint16
    max_iter: int
    roots: np.ndarray

    MAGIC = b"NABASIN1\n"

    def save(self, path) -> None:
        header = {
            "viewport": self.viewport.to_json(),
            "max_iter": self.max_iter,
            "roots": [[float(r.real), float(r.imag)] for r in self.roots],
            "dtype": {"labels": "int16", "iterations": "uint16"},
            "order": "row-major",
        }
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(len(blob).to_bytes(8, "little"))
            fh.write(blob)
            fh.write(self.labels.astype("<i2").tobytes())
            fh.write(self.iterations.astype("<u2").tobytes())

    @classmethod
    def load(cls, path) -> "BasinGrid":
        raw = Path(path).read_bytes()
        if not raw.startswith(cls.MAGIC):
            raise ValueError("not a basin grid file")
        k = len(cls.MAGIC)
        n = int.from_bytes(raw[k : k + 8], "little")
        header = json.loads(raw[k + 8 : k + 8 + n])
        vp = header["viewport"]
        viewport = Viewport(complex(*vp["center"]), vp["width"], tuple(vp["shape"]))
        size = viewport.shape[0] * viewport.shape[1]
        off = k + 8 + n
        labels = np.frombuffer(raw, "<i2", size, off).reshape(viewport.shape).astype(np.int16)
        iters = np.frombuffer(raw, "<u2", size, off + 2 * size).reshape(viewport.shape).astype(np.uint16)
        roots = np.array([complex(a, b) for a, b in header["roots"]])
        return cls(viewport, labels, iters, header["max_iter"], roots)

    def colors(self, shade: bool = True) -> np.ndarray:
        """RGB image: one hue per root, darker with iteration count, black elsewhere."""
        d = len(self.roots)
        hues = np.linspace(0, 1, d, endpoint=False)
        base = np.stack([_hsv(h, 0.55, 0.95) for h in hues]) if d else np.zeros((0, 3))
        img = np.zeros(self.labels.shape + (3,))
        ok = self.labels >= 0
        img[ok] = base[self.labels[ok]]
        if shade:
            fade = 1 - 0.5 * np.clip(self.iterations / max(1, min(self.max_iter, 40)), 0, 1)
            img *= fade[..., None]
        return (255 * img).astype(np.uint8)


def _hsv(h, s, v):
    import colorsys

    return np.array(colorsys.hsv_to_rgb(h, s, v))


def render_basins(nmap, viewport: Viewport, max_iter: int = 100, tol: float = ROOT_TOL) -> BasinGrid:
    """Label each pixel with the root its Newton orbit reaches within ``tol``."""
    z = viewport.coords().ravel().copy()
    labels = np.full(z.size, NON_CONVERGING, dtype=np.int16)
    iters = np.zeros(z.size, dtype=np.uint16)
    active = np.arange(z.size)
    roots = nmap.roots
    zz = z
    for k in range(max_iter + 1):
        dist = np.abs(zz[:, None] - roots[None, :])
        hit = dist.min(axis=1) < tol
        if hit.any():
            labels[active[hit]] = dist[hit].argmin(axis=1)
            iters[active[hit]] = k
        keep = ~hit & np.isfinite(zz)
        active, zz = active[keep], zz[keep]
        if not active.size or k == max_iter:
            break
        zz = nmap(zz)
    iters[labels == NON_CONVERGING] = max_iter
    return BasinGrid(viewport, labels.reshape(viewport.shape), iters.reshape(viewport.shape), max_iter, roots.copy())


def write_image(rgb: np.ndarray, path, overlays=()) -> None:
    """Write PNG or PPM (by suffix) with optional polyline overlays.

    ``overlays`` holds ``(points, style)`` pairs in pixel coordinates
    ``(row, col)``; style keys are ``color`` and ``width``.
    """
    from PIL import Image, ImageDraw

    img = Image.fromarray(rgb, "RGB")
    draw = ImageDraw.Draw(img)
    for pts, style in overlays:
        xy = [(float(c), float(r)) for r, c in pts]
        if len(xy) >= 2:
            draw.line(xy, fill=tuple(style.get("color", (255, 255, 255))), width=int(style.get("width", 1)))
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        img.save(path, format="PPM")
    else:
        img.save(path, format="PNG")


def trace_to_pixels(viewport: Viewport, trace: np.ndarray, margin: float = 4.0):
    """Split a trace into runs of pixel coordinates near the viewport."""
    t = np.asarray(trace)
    t = t[np.isfinite(t)]
    r, c = viewport.to_pixel(t)
    ny, nx = viewport.shape
    inside = (r > -margin * ny) & (r < (1 + margin) * ny) & (c > -margin * nx) & (c < (1 + margin) * nx)
    runs, cur = [], []
    for ok, rr, cc in zip(inside, r, c):
        if ok:
            cur.append((rr, cc))
        elif cur:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    return runs


# ---------------------------------------------------------------------------
# local structure at the roots


def taylor_at_root(nmap, a: complex):
    """Local degree ``k`` and leading coefficient ``c`` with ``N(z)-a ~ c (z-a)^k``."""
    shift = Polynomial([a, 1])
    pa = Polynomial(nmap.p[::-1])(shift)
    dpa = Polynomial(nmap.dp[::-1])(shift)
    g = (Polynomial([0, 1]) * dpa - pa).coef / dpa.coef[0]
    scale = max(1.0, np.max(np.abs(g)))
    for k in range(1, g.size):
        if abs(g[k]) > 1e-9 * scale:
            return k, complex(g[k])
    raise TraceStalled("degenerate Taylor expansion at root")


def basin_radius(nmap, a: complex) -> float:
    """Radius of a disk around ``a`` mapped into its half-size disk by ``N``."""
    others = np.concatenate([nmap.roots[nmap.roots != a], nmap.poles()])
    r = 0.5 * np.min(np.abs(others - a))
    circle = np.exp(2j * np.pi * np.arange(64) / 64)
    for _ in range(60):
        img = nmap(a + r * circle)
        if np.all(np.abs(img - a) < 0.5 * r):
            return r
        r *= 0.5
    raise TraceStalled("no contracting disk around root")


@dataclass
class InternalRay:
    bubble: str
    angle: Fraction
    direction: float
    trace: np.ndarray
    landing: complex = complex("inf")


def trace_fixed_internal_rays(nmap, i: int, stop_radius: float = RAY_STOP, seed_samples: int = 9) -> list:
    """The ``k_i - 1`` invariant internal rays of the immediate basin of root ``i``.

    Each ray starts at the root in a direction fixed by the local normal form
    and is extended by pulling back a fundamental arc; ray ``j`` has internal
    angle ``j/(k_i-1)`` counted counterclockwise from direction ``theta_0``.
    """
    a = complex(nmap.roots[i])
    k, c = taylor_at_root(nmap, a)
    m = accesses_count(nmap, i)
    if m != k - 1:
        raise TraceStalled(f"root {i}: {m} accesses but local degree {k}; free critical point in the basin")
    rays = []
    r_basin = basin_radius(nmap, a)
    for j in range(k - 1):
        theta = (2 * np.pi * j - np.angle(c)) / (k - 1)
        eps = min(0.25 * r_basin, (0.05 / abs(c)) ** (1 / (k - 1)))
        z0 = a + eps * np.exp(1j * theta)
        w0 = complex(nmap(z0))
        a0 = np.angle(w0 - a)
        a1 = a0 + np.angle(np.exp(1j * (theta - a0)))
        r = np.geomspace(abs(w0 - a), eps, seed_samples)
        ph = np.interp(np.log(r), [np.log(r[0]), np.log(r[-1])], [a0, a1])
        seed = a + r * np.exp(1j * ph)
        head = [seed]
        while abs(head[0][0] - a) > 1e-13 * max(1, abs(a)):
            head.insert(0, nmap(head[0])[:-1])
        inner = np.concatenate([[a]] + head)
        outer = trace_invariant_curve(nmap, seed, stop_radius)
        trace = np.concatenate([inner[:-1], outer])
        rays.append(InternalRay(f"U{i}", Fraction(j, k - 1), float(theta), trace))
    return rays


def channel_diagram(nmap) -> PlanarGraph:
    """Union of the fixed internal rays of all immediate basins as an embedded graph."""
    g = PlanarGraph({"kind": "channel-diagram", "level": 0})
    g.add_vertex("inf", kind=INFINITY)
    labels = {}
    for i, a in enumerate(nmap.roots):
        g.add_vertex(f"r{i}", kind=FATOU, anchor=complex(a), root=i)
    for i in range(nmap.d):
        rays = trace_fixed_internal_rays(nmap, i)
        for j, ray in enumerate(rays):
            eid = f"c{i}" if len(rays) == 1 else f"c{i}.{j}"
            g.add_edge(eid, f"r{i}", "inf", trace=ray.trace, etype="N")
            labels[eid] = {"root": i, "angle": str(ray.angle), "direction": ray.direction}
    g.meta["ray_labels"] = labels
    set_rotations_from_geometry(g)
    return g


# ---------------------------------------------------------------------------
# bubbles


@dataclass
class Bubble:
    id: str
    basin: int
    generation: int
    center: complex
    boundary: np.ndarray = field(repr=False, default=None)
    pixels: int = 0
    sample: complex = 0j


def center_and_generation(nmap, z: complex, basin: int, max_steps: int = 200):
    """Center of the Fatou component containing ``z`` and its generation.

    The orbit of ``z`` is followed into a contracting disk at the root; the
    segment from there to the root is pulled back along the orbit, which
    keeps every pulled-back path inside the corresponding component.
    """
    a = complex(nmap.roots[basin])
    r = basin_radius(nmap, a)
    orbit = [complex(z)]
    while abs(orbit[-1] - a) >= r:
        if len(orbit) > max_steps:
            raise ResolutionTooCoarse("orbit did not reach the root")
        orbit.append(complex(nmap(orbit[-1])))
    path = np.linspace(orbit[-1], a, 6)
    centers = [a]
    # the segment lies in the contracting disk, hence in the immediate basin
    for zk in reversed(orbit[:-1]):
        _, path = pull_back_branch(nmap, path, zk, end_is_vertex=True)
        centers.append(complex(path[-1]))
    centers.reverse()
    gen = next(k for k, c in enumerate(centers) if abs(c - a) < 1e-9 * max(1, abs(a)))
    return centers[0], gen


def identify_bubbles(nmap, grid: BasinGrid, max_generation: int, min_pixels: int = 4) -> list:
    """Bubbles of generation at most ``max_generation`` resolved by the grid.

    Generations are first propagated through the grid (a bubble's image is
    the component containing the image of its deepest pixel); centers are
    then computed by pulling back along the orbit, which also confirms the
    generation.
    """
    vp = grid.viewport
    coords = vp.coords()
    comp_of = np.full(grid.labels.shape, -1, dtype=np.int64)
    comps = []  # (basin, size, sample, mask slice info)
    for i in range(len(grid.roots)):
        lab, n = ndimage.label(grid.labels == i)
        if not n:
            continue
        idx = np.arange(1, n + 1)
        sizes = ndimage.sum_labels(np.ones_like(lab), lab, index=idx)
        dist = ndimage.distance_transform_edt(lab > 0)
        deepest = ndimage.maximum_position(dist, lab, index=idx)
        base = len(comps)
        comp_of[lab > 0] = lab[lab > 0] - 1 + base
        for k in range(n):
            comps.append((i, int(sizes[k]), coords[deepest[k]]))
    ncomp = len(comps)
    gen = np.full(ncomp, -1)
    target = np.full(ncomp, -1)
    ny, nx = grid.labels.shape
    for c, (i, size, z) in enumerate(comps):
        a = grid.roots[i]
        if abs(z - a) < basin_radius(nmap, a):
            gen[c] = 0
            continue
        r, col = vp.to_pixel(nmap(z))
        r, col = int(round(float(r))), int(round(float(col)))
        if 0 <= r < ny and 0 <= col < nx and grid.labels[r, col] == i:
            target[c] = comp_of[r, col]
    for c, (i, size, z) in enumerate(comps):
        rr, cc = vp.to_pixel(grid.roots[i])
        rr, cc = int(round(float(rr))), int(round(float(cc)))
        if 0 <= rr < ny and 0 <= cc < nx and comp_of[rr, cc] == c:
            gen[c] = 0
    for _ in range(max_generation + 1):
        known = (gen < 0) & (target >= 0)
        upd = known & (gen[np.maximum(target, 0)] >= 0)
        if not upd.any():
            break
        gen[upd] = gen[target[upd]] + 1
    found = {}
    small = 0
    for c, (i, size, z) in enumerate(comps):
        if gen[c] > max_generation:
            continue
        if size < min_pixels:
            small += gen[c] >= 0
            continue
        if gen[c] < 0 and target[c] >= 0:
            continue  # image component too deep
        center, g = center_and_generation(nmap, z, i)
        if g > max_generation:
            continue
        mask = comp_of == c
        edge = mask & ~ndimage.binary_erosion(mask)
        key = (i, round(center.real, 7), round(center.imag, 7))
        if key in found:
            found[key].pixels += size
            found[key].boundary = np.concatenate([found[key].boundary, coords[edge]])
            continue
        found[key] = Bubble("", i, g, center, coords[edge], size, z)
    bubbles = sorted(found.values(), key=lambda b: (b.generation, b.basin, b.center.real, b.center.imag))
    for k, b in enumerate(bubbles):
        b.id = f"B{b.basin}.{b.generation}.{k}"
    if max_generation > 0 and not any(b.generation == max_generation for b in bubbles) and small:
        raise ResolutionTooCoarse(
            f"no resolved bubble of generation {max_generation}; {small} components below {min_pixels} pixels"
        )
    return bubbles


def prepole_witness(nmap, z: complex, depth: int = 6, radius: float = 1e-2):
    """A prepole near ``z``: a point mapped to infinity within ``depth`` steps."""
    for k in range(depth):
        def g(x, k=k):
            return np.polyval(nmap.dp, nmap.iterate(x, k))

        x = complex(z)
        for _ in range(60):
            h = 1e-7 * max(1, abs(x))
            gx = g(x)
            dg = (g(x + h) - g(x - h)) / (2 * h)
            if not np.isfinite(dg) or dg == 0:
                break
            step = gx / dg
            x -= step
            if abs(step) < 1e-14 * max(1, abs(x)):
                break
        if abs(x - z) < radius and abs(g(x)) < 1e-8:
            return x, k + 1
    return None


def bubbles_adjacent(nmap, b1: Bubble, b2: Bubble, pixel: float):
    """Adjacency witness: close boundaries and a common prepole."""
    if b1.boundary is None or b2.boundary is None or not len(b1.boundary) or not len(b2.boundary):
        return None
    dd = np.abs(b1.boundary[:, None] - b2.boundary[None, :])
    k = np.unravel_index(np.argmin(dd), dd.shape)
    if dd[k] > 2 * np.sqrt(2) * pixel:
        return None
    mid = 0.5 * (b1.boundary[k[0]] + b2.boundary[k[1]])
    return prepole_witness(nmap, mid, radius=3 * pixel)


def accesses_count(nmap, i: int) -> int:
    """Number of critical points in the immediate basin of root ``i`` with multiplicity."""
    a = complex(nmap.roots[i])
    crit = critical_points(nmap)
    total = 0
    r = basin_radius(nmap, a)
    for c, m, fixed in zip(crit.points, crit.multiplicities, crit.is_fixed):
        if fixed:
            total += m if abs(c - a) < 1e-6 else 0
            continue
        z = complex(c)
        for _ in range(500):
            if abs(z - a) < r or not abs(z) < 1e8:
                break
            z = complex(nmap(z))
        if not abs(z) < 1e8 or abs(z - a) >= r:
            continue
        # pulling back through the critical point itself is degenerate; a
        # nearby point lies in the same Fatou component
        try:
            _, gen = center_and_generation(nmap, complex(c) + 1e-6 * (1 + abs(c)), i)
            inside = gen == 0
        except NumericError:
            inside = _joined_in_basin(nmap, i, complex(c))
        if inside:
            total += m
    return int(total)


def _joined_in_basin(nmap, i: int, z: complex, res: int = 600) -> bool:
    """Raster test: ``z`` and root ``i`` in one component of the basin near both."""
    a = complex(nmap.roots[i])
    span = max(abs(z - a), 1e-3)
    vp = Viewport((a + z) / 2, 3 * span, (res, res))
    lab, _ = ndimage.label(render_basins(nmap, vp, max_iter=200).labels == i)
    (ra, ca), (rz, cz) = (np.rint(np.asarray(vp.to_pixel(p), dtype=float)).astype(int) for p in (a, z))
    return lab[ra, ca] > 0 and lab[ra, ca] == lab[rz, cz]


def distance_to_infinity(z):
    return chordal(z, np.inf)
