"""Newton maps of polynomials with simple roots.

A Newton map is stored through its root list together with the coefficient
arrays of ``p``, ``p'``, ``p''`` and of the reduced rational form
``N(z) = (z p' - p) / p'``.  Coefficient arrays are highest degree first, as in
:func:`numpy.polyval`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DegreeTooLow,
    DuplicateRoots,
    NoConvergence,
    RootSolveFailure,
)
from .report import ValidationReport

SEPARATION_TOL = 1e-9
CYCLE_TOL = 1e-8
LOOSE_CYCLE_TOL = 1e-3
REFINE_TOL = 1e-10


# ---------------------------------------------------------------------------
# sphere helpers


def chordal(z, w):
    """Chordal distance on the Riemann sphere of diameter 2.

    Accepts arrays; ``inf`` stands for the point at infinity.
    """
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    zi = ~np.isfinite(z)
    wi = ~np.isfinite(w)
    with np.errstate(invalid="ignore", over="ignore"):
        zz = np.where(zi, 0, z)
        ww = np.where(wi, 0, w)
        d = 2 * np.abs(zz - ww) / (np.hypot(1, np.abs(zz)) * np.hypot(1, np.abs(ww)))
        d = np.where(zi & ~wi, 2 / np.hypot(1, np.abs(ww)), d)
        d = np.where(wi & ~zi, 2 / np.hypot(1, np.abs(zz)), d)
        d = np.where(zi & wi, 0.0, d)
    return d if d.ndim else float(d)


def to_sphere(z):
    """Stereographic image of ``z`` on the unit sphere, shape (..., 3)."""
    z = np.asarray(z, dtype=complex)
    inf = ~np.isfinite(z)
    zz = np.where(inf, 0, z)
    r2 = np.abs(zz) ** 2
    out = np.stack([2 * zz.real, 2 * zz.imag, r2 - 1], axis=-1) / (1 + r2)[..., None]
    out[inf] = (0.0, 0.0, 1.0)
    return out


# ---------------------------------------------------------------------------
# simultaneous root finding


def _horner(coeffs, z):
    p = np.broadcast_to(coeffs[:, :1], z.shape).astype(complex)
    dp = np.zeros_like(p)
    for k in range(1, coeffs.shape[1]):
        dp = dp * z + p
        p = p * z + coeffs[:, k : k + 1]
    return p, dp


def aberth(coeffs, init=None, tol=1e-14, max_iter=400):
    """Roots of one polynomial or of a batch of polynomials of equal degree.

    ``coeffs`` has shape ``(n+1,)`` or ``(batch, n+1)``.  All roots are updated
    simultaneously by the Aberth correction with no deflation.  ``init``
    optionally warm-starts the iteration with an array of shape
    ``(batch, n)``.
    """
    c = np.asarray(coeffs, dtype=complex)
    single = c.ndim == 1
    c = np.atleast_2d(c)
    if np.any(c[:, 0] == 0):
        raise RootSolveFailure("leading coefficient vanishes")
    c = c / c[:, :1]
    batch, n = c.shape[0], c.shape[1] - 1
    if n == 0:
        out = np.zeros((batch, 0), dtype=complex)
        return out[0] if single else out
    if n == 1:
        out = -c[:, 1:2]
        return out[0] if single else out
    if init is None:
        k = np.arange(1, n + 1)
        radius = 2 * np.max(np.abs(c[:, 1:]) ** (1.0 / k), axis=1)
        radius = np.maximum(radius, 1e-3)
        centre = -c[:, 1] / n
        ang = 2 * np.pi * np.arange(n) / n + 0.4
        z = centre[:, None] + 0.5 * radius[:, None] * np.exp(1j * ang)[None, :]
    else:
        z = np.array(init, dtype=complex).reshape(batch, n).copy()
    active = np.arange(batch)
    eye = np.eye(n, dtype=bool)
    for _ in range(max_iter):
        zz = z[active]
        p, dp = _horner(c[active], zz)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = p / dp
            diff = zz[:, :, None] - zz[:, None, :]
            diff[:, eye] = 1.0
            inv = 1.0 / diff
            inv[:, eye] = 0.0
            w = ratio / (1 - ratio * inv.sum(axis=2))
        bad = ~np.isfinite(w)
        if bad.any():
            w[bad] = 1e-6 * (1 + np.abs(zz[bad]))
        zz = zz - w
        z[active] = zz
        done = np.all(np.abs(w) <= tol * (1 + np.abs(zz)), axis=1)
        active = active[~done]
        if active.size == 0:
            break
    if active.size:
        # accept stagnated rows whose residual is at rounding level
        p, dp = _horner(c[active], z[active])
        scale = _horner(np.abs(c[active]), np.abs(z[active]))[0].real
        if np.any(np.abs(p) > 1e-9 * (scale + 1e-300)):
            raise RootSolveFailure(f"Aberth iteration did not converge for {active.size} polynomial(s)")
    return z[0] if single else z


# ---------------------------------------------------------------------------
# rational maps


class RationalMap:
    """Rational map ``P/Q`` held as coefficient arrays (highest degree first)."""

    def __init__(self, numerator, denominator):
        self.numerator = np.trim_zeros(np.asarray(numerator, dtype=complex), "f")
        self.denominator = np.trim_zeros(np.asarray(denominator, dtype=complex), "f")
        if self.denominator.size == 0:
            raise ConfigError("zero denominator")

    @property
    def degree(self) -> int:
        return max(self.numerator.size, self.denominator.size) - 1

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        P, Q = self.numerator, self.denominator
        dp, dq = P.size - 1, Q.size - 1
        out = np.empty(z.shape, dtype=complex)
        fin = np.isfinite(z)
        big = fin & (np.abs(z) > 1)
        small = fin & ~big
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            zs = z[small]
            num, den = np.polyval(P, zs), np.polyval(Q, zs)
            out[small] = np.where(den == 0, np.inf, num / np.where(den == 0, 1, den))
            u = 1 / z[big]
            num, den = _rev_eval(P, u), _rev_eval(Q, u)
            ratio = np.where(den == 0, np.inf, num / np.where(den == 0, 1, den))
            out[big] = ratio * u ** (dq - dp) if dq >= dp else ratio / u ** (dp - dq)
        if dp > dq:
            out[~fin] = np.inf
        elif dp == dq:
            out[~fin] = P[0] / Q[0]
        else:
            out[~fin] = 0
        out[~np.isfinite(out)] = np.inf
        return out if out.ndim else complex(out)

    def derivative(self, z):
        z = np.asarray(z, dtype=complex)
        P, Q = self.numerator, self.denominator
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.polyval(Q, z)
            out = (np.polyval(np.polyder(P), z) * q - np.polyval(P, z) * np.polyval(np.polyder(Q), z)) / q**2
        return out if out.ndim else complex(out)

    def iterate(self, z, n: int):
        for _ in range(n):
            z = self(z)
        return z

    def multiplier_at_infinity(self):
        """Multiplier of the fixed point at infinity, or None if it is not fixed."""
        dp, dq = self.numerator.size - 1, self.denominator.size - 1
        if dp == dq + 1:
            return complex(self.denominator[0] / self.numerator[0])
        if dp > dq + 1:
            return 0j
        return None

    def finite_fixed_points(self):
        g = np.polysub(self.numerator, np.polymul([1, 0], self.denominator))
        g = np.trim_zeros(g, "f")
        if g.size <= 1:
            return np.zeros(0, dtype=complex)
        return np.asarray(aberth(g))


def _rev_eval(P, u):
    # P(1/u) * u**deg P
    return np.polyval(P[::-1], u)


class NewtonMap(RationalMap):
    """Newton map of the monic polynomial with the given simple roots."""

    def __init__(self, roots):
        roots = np.asarray(roots, dtype=complex).ravel()
        self.roots = roots
        self.p = np.poly(roots)
        self.dp = np.polyder(self.p)
        self.ddp = np.polyder(self.dp)
        super().__init__(np.polysub(np.polymul([1, 0], self.dp), self.p), self.dp)

    @property
    def d(self) -> int:
        return self.roots.size

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        fin = np.isfinite(z) & (np.abs(z) < 1e150)
        out = np.full(z.shape, np.inf, dtype=complex)
        zf = z[fin]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            dpv = np.polyval(self.dp, zf)
            val = zf - np.polyval(self.p, zf) / dpv
        val[~np.isfinite(val)] = np.inf
        out[fin] = val
        return out if out.ndim else complex(out)

    def derivative(self, z):
        z = np.asarray(z, dtype=complex)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            dpv = np.polyval(self.dp, z)
            out = np.polyval(self.p, z) * np.polyval(self.ddp, z) / dpv**2
        return out if out.ndim else complex(out)

    def preimage_coeffs(self, w):
        """Coefficient rows of ``z p' - p - w p'`` for each finite ``w``."""
        w = np.atleast_1d(np.asarray(w, dtype=complex))
        base = self.numerator
        pad = np.concatenate([[0], self.dp])
        return base[None, :] - w[:, None] * pad[None, :]

    def poles(self):
        return np.asarray(aberth(self.dp)) if self.d > 2 else np.roots(self.dp)

    def preimages(self, w, init=None):
        """All ``d`` preimages of each point of ``w`` (rows), warm start optional."""
        w = np.atleast_1d(np.asarray(w, dtype=complex))
        out = np.empty((w.size, self.d), dtype=complex)
        inf = ~np.isfinite(w) | (np.abs(w) > 1e12)
        if inf.any():
            out[inf, : self.d - 1] = self.poles()[None, :]
            out[inf, self.d - 1] = np.inf
        fin = ~inf
        if fin.any():
            warm = None if init is None else np.asarray(init)[fin]
            if warm is not None and not np.all(np.isfinite(warm)):
                warm = None
            out[fin] = aberth(self.preimage_coeffs(w[fin]), init=warm)
        return out

    def vertex_preimages(self, w, merge_tol: float = 1e-4):
        """Distinct preimages of one point with multiplicities.

        A cluster of ``k`` nearby roots is polished as a single root of the
        ``(k-1)``-th derivative, which is simple there.  Results are cached
        since graph vertices are pulled back many times.
        """
        w = complex(w)
        cache = self.__dict__.setdefault("_vertex_cache", {})
        if w in cache:
            return cache[w]
        if not np.isfinite(w):
            out = [(complex(z), k) for z, k in zip(*_cluster(list(self.poles()), merge_tol))]
            out = [(self._polish(self.dp, z, k), k) for z, k in out]
            out.append((complex("inf"), 1))
        else:
            P = self.preimage_coeffs(w)[0]
            z = aberth(P)
            reps, counts = _cluster(list(z), merge_tol)
            out = []
            for r, k in zip(reps, counts):
                members = z[np.abs(z - r) < merge_tol]
                out.append((self._polish(P, complex(members.mean()), k), k))
        cache[w] = out
        return out

    @staticmethod
    def _polish(P, z, k, steps: int = 8):
        Q = np.polyder(P, k - 1) if k > 1 else P
        dQ = np.polyder(Q)
        for _ in range(steps):
            q, dq = np.polyval(Q, z), np.polyval(dQ, z)
            if dq == 0:
                break
            step = q / dq
            z = z - step
            if abs(step) < 1e-16 * (1 + abs(z)):
                break
        return complex(z)

    def to_json(self) -> dict:
        return {"roots": [[float(z.real), float(z.imag)] for z in self.roots]}


# ---------------------------------------------------------------------------
# construction and inventories


def load_roots(path) -> np.ndarray:
    """Read ``{"roots": [[re, im], ...]}`` from a JSON file."""
    try:
        data = json.loads(Path(path).read_text())
        roots = np.array([complex(a, b) for a, b in data["roots"]], dtype=complex)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read roots from {path}: {exc}") from exc
    return roots


def newton_map_from_roots(roots, separation: float = SEPARATION_TOL) -> NewtonMap:
    roots = np.asarray(roots, dtype=complex).ravel()
    if roots.size < 3:
        raise DegreeTooLow(f"need at least 3 roots, got {roots.size}")
    if not np.all(np.isfinite(roots)):
        raise ConfigError("roots must be finite")
    gaps = np.abs(roots[:, None] - roots[None, :])
    np.fill_diagonal(gaps, np.inf)
    if gaps.min() < separation:
        raise DuplicateRoots(f"roots closer than {separation}: min gap {gaps.min():.3g}")
    return NewtonMap(roots)


@dataclass
class FixedPointInfo:
    location: complex
    multiplier: complex
    kind: str
    exact_multiplier: Fraction | None = None


@dataclass
class CriticalSet:
    points: np.ndarray
    multiplicities: np.ndarray
    is_fixed: np.ndarray

    @property
    def total(self) -> int:
        return int(self.multiplicities.sum())

    @property
    def free(self) -> np.ndarray:
        return self.points[~self.is_fixed]

    @property
    def fixed(self) -> np.ndarray:
        return self.points[self.is_fixed]


def _cluster(points, tol):
    reps, counts = [], []
    for z in points:
        for i, r in enumerate(reps):
            if abs(z - r) < tol:
                counts[i] += 1
                break
        else:
            reps.append(z)
            counts.append(1)
    return reps, counts


def critical_points(nmap: NewtonMap, merge_tol: float = 1e-6) -> CriticalSet:
    """Zeros of ``p p''`` with multiplicity; the roots come first."""
    try:
        extra = np.asarray(aberth(nmap.ddp)) if nmap.ddp.size > 1 else np.zeros(0, complex)
    except RootSolveFailure:
        raise
    reps, counts = _cluster(list(extra), merge_tol)
    pts = list(nmap.roots)
    mult = [1] * nmap.d
    fixed = [True] * nmap.d
    for z, k in zip(reps, counts):
        near = np.abs(nmap.roots - z)
        i = int(np.argmin(near))
        if near[i] < merge_tol:
            mult[i] += k
        else:
            pts.append(z)
            mult.append(k)
            fixed.append(False)
    order = list(range(nmap.d)) + sorted(range(nmap.d, len(pts)), key=lambda j: (round(pts[j].real, 9), pts[j].imag))
    return CriticalSet(
        np.array([pts[j] for j in order], dtype=complex),
        np.array([mult[j] for j in order], dtype=int),
        np.array([fixed[j] for j in order], dtype=bool),
    )


def fixed_points(nmap: NewtonMap) -> list[FixedPointInfo]:
    out = [
        FixedPointInfo(complex(a), complex(nmap.derivative(a)), "superattracting-root", Fraction(0))
        for a in nmap.roots
    ]
    lead_num, lead_den = nmap.numerator[0], nmap.denominator[0]
    exact = None
    if abs(lead_num.imag) < 1e-12 and abs(lead_den.imag) < 1e-12:
        a, b = round(lead_den.real), round(lead_num.real)
        if abs(a - lead_den.real) < 1e-12 and abs(b - lead_num.real) < 1e-12 and b != 0:
            exact = Fraction(a, b)
    out.append(FixedPointInfo(complex(np.inf), complex(lead_den / lead_num), "repelling-infinity", exact))
    return out


def verify_head(rmap: RationalMap, tol: float = 1e-8) -> ValidationReport:
    """Check the fixed point multipliers that characterise Newton maps.

    Infinity must be a repelling fixed point and every finite fixed point must
    have multiplier ``(m-1)/m`` for a positive integer ``m``.
    """
    rep = ValidationReport("newton-map multipliers")
    if rmap.degree < 3:
        rep.add("degree", False, f"degree {rmap.degree} < 3")
    lam = rmap.multiplier_at_infinity()
    if lam is None:
        rep.add("infinity", False, "infinity is not fixed")
    else:
        rep.add("infinity", abs(lam) > 1 + tol, f"multiplier {lam:.6g}")
    for xi in rmap.finite_fixed_points():
        mu = complex(rmap.derivative(xi))
        if abs(1 - mu) < tol:
            rep.add(f"fixed {xi:.6g}", False, "parabolic multiplier 1")
            continue
        m = 1 / (1 - mu)
        ok = abs(m.imag) < tol * max(1, abs(m)) and m.real > 1 - tol and abs(m.real - round(m.real)) < tol * max(1, abs(m))
        rep.add(f"fixed {xi:.6g}", bool(ok), f"multiplier {mu:.3g}, m={m.real:.6g}")
    rep.data["infinity_multiplier"] = None if lam is None else [lam.real, lam.imag]
    return rep


# ---------------------------------------------------------------------------
# orbits


@dataclass
class CycleInfo:
    representative: complex
    period: int
    preperiod: int
    multiplier_modulus: float
    points: np.ndarray


@dataclass
class Escape:
    steps: int


@dataclass
class NoCycleDetected:
    iterations: int


def orbit(rmap: RationalMap, z0, max_iter: int = 1000, tolerance: float = CYCLE_TOL):
    """Follow the forward orbit of ``z0`` and report its eventual cycle.

    Every new point is compared in the chordal metric with the whole stored
    history, so the first closure found gives the minimal period.  Landing on
    infinity (a pole or prepole) is reported as :class:`Escape`.
    """
    if max_iter < 1:
        raise ConfigError("max_iter must be at least 1")
    hist = np.empty(max_iter + 1, dtype=complex)
    hist[0] = z0
    z = complex(z0)
    for n in range(1, max_iter + 1):
        z = complex(rmap(z))
        if not np.isfinite(z) or chordal(z, np.inf) < tolerance:
            return Escape(n)
        dist = chordal(hist[:n], z)
        hits = np.nonzero(dist < tolerance)[0]
        hist[n] = z
        if hits.size:
            j = int(hits[0])
            period = n - j
            pts = hist[j:n].copy()
            mult = float(np.prod(np.abs(rmap.derivative(pts))))
            return CycleInfo(complex(hist[j]), period, j, mult, pts)
    return NoCycleDetected(max_iter)


# ---------------------------------------------------------------------------
# postcritically finite refinement


def _nearest_free(nmap: NewtonMap, loc: complex) -> complex:
    crit = critical_points(nmap)
    free = crit.free
    if free.size == 0:
        raise NoConvergence("no free critical point")
    return complex(free[np.argmin(np.abs(free - loc))])


def _resolve_targets(nmap: NewtonMap, targets):
    crit = critical_points(nmap)
    out = []
    for spec in targets:
        where, period, preperiod = spec
        if isinstance(where, (int, np.integer)):
            loc = complex(crit.free[int(where)])
        else:
            loc = complex(where)
        out.append((loc, int(period), int(preperiod)))
    return out


def pcf_residuals(nmap: NewtonMap, targets) -> np.ndarray:
    """``N^(l+n)(c) - N^l(c)`` for each target ``(c, n, l)``."""
    res = []
    for loc, period, preperiod in _resolve_targets(nmap, targets):
        c = _nearest_free(nmap, loc)
        a = nmap.iterate(c, preperiod)
        b = nmap.iterate(a, period)
        res.append(b - a)
    return np.array(res, dtype=complex)


def refine_pcf(
    nmap: NewtonMap,
    target_cycles,
    fixed=(0, 1),
    tol: float = REFINE_TOL,
    max_steps: int = 60,
) -> np.ndarray:
    """Move the roots so that the targeted critical orbits close exactly.

    ``target_cycles`` holds ``(critical point, period, preperiod)`` triples; the
    critical point is an index into ``critical_points(map).free`` or an
    approximate location.  The roots listed in ``fixed`` stay put, which removes
    the affine conjugation freedom; the others are moved by damped
    Gauss-Newton steps with a complex finite-difference Jacobian.
    """
    targets = _resolve_targets(nmap, target_cycles)
    roots = nmap.roots.copy()
    free_idx = [i for i in range(roots.size) if i not in set(fixed)]
    if not free_idx:
        raise ConfigError("no roots left free to refine")

    def residual(r, locs):
        m = NewtonMap(r)
        vals, new_locs = [], []
        for (_, period, preperiod), loc in zip(targets, locs):
            c = _nearest_free(m, loc)
            a = m.iterate(c, preperiod)
            vals.append(m.iterate(a, period) - a)
            new_locs.append(c)
        return np.array(vals, dtype=complex), new_locs

    locs = [t[0] for t in targets]
    g, locs = residual(roots, locs)
    if np.max(np.abs(g)) < tol:
        return roots
    for _ in range(max_steps):
        J = np.empty((g.size, len(free_idx)), dtype=complex)
        for col, i in enumerate(free_idx):
            h = 1e-7 * (1 + abs(roots[i]))
            rp, rm = roots.copy(), roots.copy()
            rp[i] += h
            rm[i] -= h
            J[:, col] = (residual(rp, locs)[0] - residual(rm, locs)[0]) / (2 * h)
        step = np.linalg.lstsq(J, -g, rcond=None)[0]
        t, norm0 = 1.0, np.max(np.abs(g))
        while t > 1e-4:
            trial = roots.copy()
            trial[free_idx] += t * step
            try:
                g_new, locs_new = residual(trial, locs)
            except Exception:
                g_new = None
            if g_new is not None and np.all(np.isfinite(g_new)) and np.max(np.abs(g_new)) < norm0:
                break
            t /= 2
        else:
            break
        roots, g, locs = trial, g_new, locs_new
        if np.max(np.abs(g)) < 1e-3 * tol:
            break
    if not np.max(np.abs(g)) < tol:
        raise NoConvergence(f"critical orbit residual {np.max(np.abs(g)):.3g} after refinement")
    return roots
