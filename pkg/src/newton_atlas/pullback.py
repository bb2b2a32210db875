"""Continuation of inverse branches of a Newton map along polylines."""

from __future__ import annotations

import numpy as np

from .errors import BranchJumpDetected, TraceStalled

# a matched step may move at most this fraction of the gap between branches
STEP_FRACTION = 1 / 3
MAX_REFINE = 30


def _min_gaps(Z):
    diff = np.abs(Z[:, :, None] - Z[:, None, :])
    n = Z.shape[1]
    diff[:, np.arange(n), np.arange(n)] = np.inf
    return diff.min(axis=2)


def preimage_curves(nmap, w, skip_ends=True):
    """Follow all ``d`` inverse branches along the polyline ``w``.

    Returns ``(w_refined, Z)`` where row ``k`` of ``Z`` holds the preimages of
    ``w_refined[k]`` and column ``j`` is one continuous branch.  Steps where a
    branch would move more than a third of the gap to its neighbours are
    subdivided.  The first and last steps are exempt when ``skip_ends`` is
    set, because graph vertices may be critical values; callers snap the
    endpoints to exact vertex preimages.
    """
    w = np.asarray(w, dtype=complex)
    skip_first, skip_last = (skip_ends, skip_ends) if isinstance(skip_ends, bool) else skip_ends
    Z = nmap.preimages(w)
    for _ in range(MAX_REFINE):
        A, B = Z[:-1], Z[1:]
        dist = np.abs(A[:, :, None] - B[:, None, :])
        choice = dist.argmin(axis=2)
        step = np.take_along_axis(dist, choice[:, :, None], axis=2)[:, :, 0]
        gaps = _min_gaps(B)
        with np.errstate(invalid="ignore"):
            tight = step > STEP_FRACTION * np.where(np.isfinite(gaps), gaps, np.inf)
        sorted_choice = np.sort(choice, axis=1)
        perm_ok = np.all(sorted_choice == np.arange(Z.shape[1])[None, :], axis=1)
        bad = tight.any(axis=1) | ~perm_ok
        if bad.size:
            bad[0] &= not skip_first
            bad[-1] &= not skip_last
        if not bad.any():
            break
        idx = np.nonzero(bad)[0]
        mids = 0.5 * (w[idx] + w[idx + 1])
        if np.min(np.abs(w[idx + 1] - w[idx])) < 1e-14 * (1 + np.max(np.abs(w[idx]))):
            raise BranchJumpDetected(f"cannot separate inverse branches near w={w[idx[0]]:.6g}")
        zmid = nmap.preimages(mids)
        w = np.insert(w, idx + 1, mids)
        Z = np.insert(Z, idx + 1, zmid, axis=0)
    else:
        raise BranchJumpDetected("branch continuation did not settle")
    # assemble columns by composing the step matchings
    A, B = Z[:-1], Z[1:]
    dist = np.abs(A[:, :, None] - B[:, None, :])
    out = np.empty_like(Z)
    out[0] = Z[0]
    cols = np.arange(Z.shape[1])
    for k in range(Z.shape[0] - 1):
        if (skip_first and k == 0) or (skip_last and k == Z.shape[0] - 2):
            # unique assignment even when two branches meet at a vertex
            from scipy.optimize import linear_sum_assignment

            prev = out[k]
            cost = np.abs(prev[:, None] - Z[k + 1][None, :])
            cost = np.where(np.isfinite(cost), cost, 1e300)
            _, cols = linear_sum_assignment(cost)
            out[k + 1] = Z[k + 1][cols]
            continue
        prev = out[k]
        cost = np.abs(prev[:, None] - Z[k + 1][None, :])
        out[k + 1] = Z[k + 1][cost.argmin(axis=1)]
    return w, out


def pull_back_branch(nmap, w, start: complex, end_is_vertex: bool = False):
    """Single inverse branch along ``w`` whose first point is nearest ``start``.

    Set ``end_is_vertex`` when the last point of ``w`` may be a critical
    value; the branch then stops one sample short and is closed with the
    nearest exact preimage of that point.
    """
    w = np.asarray(w, dtype=complex)
    body = w[:-1] if end_is_vertex else w
    wr, Z = preimage_curves(nmap, body, skip_ends=False)
    j = int(np.argmin(np.abs(Z[0] - start)))
    br = Z[:, j]
    if end_is_vertex:
        exact = np.array([p for p, _ in nmap.vertex_preimages(w[-1])])
        br = np.append(br, exact[np.argmin(np.abs(exact - br[-1]))])
        wr = np.append(wr, w[-1])
    return wr, br


def trace_invariant_curve(nmap, seed, stop_radius: float = 2e6, max_steps: int = 400):
    """Extend the fundamental arc ``seed`` (ending at z, starting at N(z)) outward.

    Each new piece is the inverse branch of the previous piece that starts
    where the previous piece ended, so the samples of piece ``k+1`` map
    exactly onto those of piece ``k``.
    """
    pieces = [np.asarray(seed, dtype=complex)]
    last_r = abs(pieces[-1][-1])
    stall = 0
    for _ in range(max_steps):
        if abs(pieces[-1][-1]) > stop_radius:
            break
        _, br = pull_back_branch(nmap, pieces[-1], pieces[-1][-1])
        if not np.all(np.isfinite(br)):
            raise TraceStalled("inverse branch hit a pole")
        pieces.append(br)
        r = abs(br[-1])
        stall = stall + 1 if r <= last_r * (1 + 1e-9) else 0
        if stall > 20:
            raise TraceStalled(f"curve stopped growing at |z|={r:.3g}")
        last_r = r
    else:
        raise TraceStalled("step budget exhausted before reaching infinity")
    out = [pieces[0]] + [p[1:] for p in pieces[1:]]
    return np.concatenate(out)
