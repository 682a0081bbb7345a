"""Baseline minutiae matcher.

Alignment is a generalized Hough vote: every probe/gallery minutia pair
whose directions agree within ``angle_tolerance`` proposes the rigid
motion that maps the gallery minutia onto the probe one, and the densest
accumulator bin wins.  The winning bin is refined to the most frequent
integer-rounded vote inside it, so pure integer translations are recovered
exactly rather than at bin resolution.

Given an alignment ``(dx, dy, dtheta)`` the relation is
``probe ~= R(dtheta) @ gallery + (dx, dy)``; matching applies the inverse
to the probe, pairs minutiae greedily in increasing distance order and
scores ``scale * m**2 / (n_probe * n_gallery)``.

All angles are integers in 1/256 turn units and compared circularly.  The
hot loops are numba kernels; the batch entry point :func:`score_pairs`
optionally spreads pairs over threads without changing any output bit.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numba as nb
import numpy as np

from .codec import MinutiaTemplate
from .errors import ConfigError, EmptyTemplate

ANGLE_UNITS = 256

_ANGLES = 2.0 * np.pi * np.arange(ANGLE_UNITS) / ANGLE_UNITS
COS_TABLE = np.cos(_ANGLES)
SIN_TABLE = np.sin(_ANGLES)

# bin indices are offset into a non-negative range before packing
_BIN_OFFSET = 1 << 20
_BIN_SPAN = 1 << 21


@dataclass(frozen=True)
class MatcherParams:
    distance_tolerance: float = 15.0
    angle_tolerance: int = 16
    alignment_bins: tuple[float, float, int] = (10.0, 10.0, 8)
    score_scale: int = 100

    def __post_init__(self) -> None:
        object.__setattr__(self, "alignment_bins", tuple(self.alignment_bins))
        if len(self.alignment_bins) != 3:
            raise ConfigError("alignment_bins needs (dx width, dy width, dtheta width)")
        if self.distance_tolerance <= 0:
            raise ConfigError("distance_tolerance must be positive")
        if not 0 < self.angle_tolerance < ANGLE_UNITS // 2:
            raise ConfigError("angle_tolerance must be in 1..127 angle units")
        if any(b <= 0 for b in self.alignment_bins):
            raise ConfigError("alignment bin widths must be positive")
        if self.score_scale <= 0:
            raise ConfigError("score_scale must be positive")

    @classmethod
    def from_dict(cls, d: dict | None) -> MatcherParams:
        if not d:
            return cls()
        unknown = set(d) - {"distance_tolerance", "angle_tolerance", "alignment_bins", "score_scale"}
        if unknown:
            raise ConfigError(f"unknown matcher parameters: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alignment_bins"] = list(self.alignment_bins)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Alignment:
    dx: int
    dy: int
    dtheta: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "dtheta", self.dtheta % ANGLE_UNITS)


# -- kernels -------------------------------------------------------------------
#
# Each template is stored three times in flat arrays: in record order, sorted
# by angle (alignment votes only visit the compatible angle window) and
# sorted by x (pairing only visits the x window).  ``*_idx`` arrays map a
# sorted position back to the record index, which is what every tie-break
# uses, so results never depend on the iteration order.
#
# Scratch space is passed in so batch scoring allocates once per chunk.


@nb.njit(cache=True, inline="always")
def _round(v):
    return int(math.floor(v + 0.5))


@nb.njit(cache=True, inline="always")
def _precedes(c1, ax1, ay1, at1, c2, ax2, ay2, at2):
    """Total order on candidate alignments: more votes, then smaller
    |dx|+|dy|, then smaller |dtheta|, then dtheta, dx, dy."""
    if c1 != c2:
        return c1 > c2
    m1 = abs(ax1) + abs(ay1)
    m2 = abs(ax2) + abs(ay2)
    if m1 != m2:
        return m1 < m2
    if abs(at1) != abs(at2):
        return abs(at1) < abs(at2)
    if at1 != at2:
        return at1 < at2
    if ax1 != ax2:
        return ax1 < ax2
    return ay1 < ay2


@nb.njit(cache=True, inline="always")
def _vote(pxi, pyi, gxj, gyj, d, cos_t, sin_t):
    r = d & 255
    c = cos_t[r]
    s = sin_t[r]
    return pxi - (c * gxj - s * gyj), pyi - (s * gxj + c * gyj)


@nb.njit(cache=True)
def _align(px, py, pa, gx_a, gy_a, ga_a, atol, wx, wy, wt, cos_t, sin_t, keys, vids):
    """Hough peak for probe (record order) against gallery sorted by angle.

    Returns (votes in peak bin, dx, dy, dtheta) with dtheta signed.
    """
    n_p = px.shape[0]
    n_g = gx_a.shape[0]
    inv_wx = 1.0 / wx
    inv_wy = 1.0 / wy
    nv = 0
    for i in range(n_p):
        pxi = px[i]
        pyi = py[i]
        pai = pa[i]
        # the gallery angles compatible with pai form at most two runs of
        # the sorted array: [lo, hi] plus its wrap-around part
        lo = pai - atol
        hi = pai + atol
        for part in range(3):
            if part == 0:
                a0 = max(lo, 0)
                a1 = min(hi, 255)
            elif part == 1:
                if lo >= 0:
                    continue
                a0 = lo + 256
                a1 = 255
            else:
                if hi <= 255:
                    continue
                a0 = 0
                a1 = hi - 256
            q = np.searchsorted(ga_a, a0)
            while q < n_g and ga_a[q] <= a1:
                d = pai - ga_a[q]
                if d > 128:
                    d -= 256
                elif d < -128:
                    d += 256
                r = d & 255
                c = cos_t[r]
                s = sin_t[r]
                dx = pxi - (c * gx_a[q] - s * gy_a[q])
                dy = pyi - (s * gx_a[q] + c * gy_a[q])
                bt = _round(d / wt) + _BIN_OFFSET
                bx = _round(dx * inv_wx) + _BIN_OFFSET
                by = _round(dy * inv_wy) + _BIN_OFFSET
                keys[nv] = (bt * _BIN_SPAN + bx) * _BIN_SPAN + by
                vids[nv] = (i * n_g + q) * 256 + r
                nv += 1
                q += 1
    if nv == 0:
        return 0, 0, 0, 0

    # open-addressing histogram of bin keys, tracking the peak as counts grow
    size = 64
    while size < 2 * nv:
        size *= 2
    mask = size - 1
    slot_key = np.full(size, -1, np.int64)
    slot_count = np.zeros(size, np.int64)
    best_key = -1
    bc = 0
    bcx = 0.0
    bcy = 0.0
    bct = 0.0
    for k in range(nv):
        key = keys[k]
        h = ((key * 0x2545F4914F6CDD1D) >> 23) & mask
        while slot_key[h] != -1 and slot_key[h] != key:
            h = (h + 1) & mask
        slot_key[h] = key
        cnt = slot_count[h] + 1
        slot_count[h] = cnt
        if key == best_key:
            bc = cnt
        elif cnt >= bc:
            cy = (key % _BIN_SPAN - _BIN_OFFSET) * wy
            rest = key // _BIN_SPAN
            cx = (rest % _BIN_SPAN - _BIN_OFFSET) * wx
            ct = (rest // _BIN_SPAN - _BIN_OFFSET) * wt
            if best_key == -1 or _precedes(cnt, cx, cy, ct, bc, bcx, bcy, bct):
                best_key = key
                bc = cnt
                bcx = cx
                bcy = cy
                bct = ct

    # refine: most frequent integer-rounded vote inside the winning bin
    packed = np.empty(bc, np.int64)
    n_sel = 0
    for k in range(nv):
        if keys[k] == best_key:
            vid = vids[k]
            d = vid % 256
            if d >= 128:
                d -= 256
            iq = vid // 256
            i = iq // n_g
            q = iq % n_g
            dx, dy = _vote(px[i], py[i], gx_a[q], gy_a[q], d, cos_t, sin_t)
            packed[n_sel] = ((d + 256) * _BIN_SPAN + (_round(dx) + _BIN_OFFSET)) * _BIN_SPAN + (
                _round(dy) + _BIN_OFFSET
            )
            n_sel += 1
    packed.sort()
    rc = 0
    rx = 0
    ry = 0
    rt = 0
    q = 0
    while q < n_sel:
        e = q
        while e < n_sel and packed[e] == packed[q]:
            e += 1
        key = packed[q]
        y = key % _BIN_SPAN - _BIN_OFFSET
        rest = key // _BIN_SPAN
        x = rest % _BIN_SPAN - _BIN_OFFSET
        t = rest // _BIN_SPAN - 256
        if rc == 0 or _precedes(e - q, x, y, t, rc, rx, ry, rt):
            rc = e - q
            rx = x
            ry = y
            rt = t
        q = e
    return bc, rx, ry, rt


@nb.njit(cache=True)
def _pair_count(px, py, pa, gx_x, gy_x, ga_x, gi_x, dx, dy, dt, tol, atol, cos_t, sin_t,
                cand_d, cand_i, cand_j):
    """Greedy one-to-one pairing; gallery arrays are sorted by x and
    ``gi_x`` maps back to record indices."""
    n_p = px.shape[0]
    n_g = gx_x.shape[0]
    u = (-dt) & 255
    c = cos_t[u]
    s = sin_t[u]
    t2 = tol * tol
    nc = 0
    for i in range(n_p):
        ux = px[i] - dx
        uy = py[i] - dy
        qx = c * ux - s * uy
        qy = s * ux + c * uy
        qa = pa[i] - dt
        start = nc
        q = np.searchsorted(gx_x, qx - tol)
        while q < n_g and gx_x[q] <= qx + tol:
            ex = qx - gx_x[q]
            ey = qy - gy_x[q]
            d2 = ex * ex + ey * ey
            r = (qa - ga_x[q]) & 255
            if d2 <= t2 and (r <= atol or r >= 256 - atol):
                # insertion keeps this probe's run ordered by gallery index
                j = gi_x[q]
                k = nc
                while k > start and cand_j[k - 1] > j:
                    cand_d[k] = cand_d[k - 1]
                    cand_i[k] = i
                    cand_j[k] = cand_j[k - 1]
                    k -= 1
                cand_d[k] = d2
                cand_i[k] = i
                cand_j[k] = j
                nc += 1
            q += 1
    # stable sort: equal distances stay in (probe, gallery) index order
    order = np.argsort(cand_d[:nc], kind="mergesort")
    used_p = np.zeros(n_p, np.bool_)
    used_g = np.zeros(n_g, np.bool_)
    m = 0
    for o in order:
        i = cand_i[o]
        j = cand_j[o]
        if not used_p[i] and not used_g[j]:
            used_p[i] = True
            used_g[j] = True
            m += 1
    return m


@nb.njit(cache=True)
def _score(px, py, pa, gx_a, gy_a, ga_a, gx_x, gy_x, ga_x, gi_x,
           tol, atol, wx, wy, wt, scale, cos_t, sin_t, keys, vids, cand_d, cand_i, cand_j):
    n_p = px.shape[0]
    n_g = gx_a.shape[0]
    if n_p == 0 or n_g == 0:
        return 0.0
    _, dx, dy, dt = _align(px, py, pa, gx_a, gy_a, ga_a, atol, wx, wy, wt, cos_t, sin_t,
                           keys, vids)
    m = _pair_count(px, py, pa, gx_x, gy_x, ga_x, gi_x, dx, dy, dt, tol, atol, cos_t, sin_t,
                    cand_d, cand_i, cand_j)
    return scale * (m * m) / (n_p * n_g)


@nb.njit(cache=True)
def _score_range(xs, ys, angs, xs_a, ys_a, angs_a, xs_x, ys_x, angs_x, idx_x, offsets,
                 probe, gallery, lo, hi, tol, atol, wx, wy, wt, scale, cos_t, sin_t, cap, out):
    keys = np.empty(cap, np.int64)
    vids = np.empty(cap, np.int64)
    cand_d = np.empty(cap, np.float64)
    cand_i = np.empty(cap, np.int64)
    cand_j = np.empty(cap, np.int64)
    for k in range(lo, hi):
        a0 = offsets[probe[k]]
        a1 = offsets[probe[k] + 1]
        b0 = offsets[gallery[k]]
        b1 = offsets[gallery[k] + 1]
        out[k] = _score(
            xs[a0:a1], ys[a0:a1], angs[a0:a1],
            xs_a[b0:b1], ys_a[b0:b1], angs_a[b0:b1],
            xs_x[b0:b1], ys_x[b0:b1], angs_x[b0:b1], idx_x[b0:b1],
            tol, atol, wx, wy, wt, scale, cos_t, sin_t,
            keys, vids, cand_d, cand_i, cand_j,
        )


@nb.njit(cache=True, parallel=True)
def _score_chunks(xs, ys, angs, xs_a, ys_a, angs_a, xs_x, ys_x, angs_x, idx_x, offsets,
                  probe, gallery, chunk, tol, atol, wx, wy, wt, scale, cos_t, sin_t, cap, out):
    n = probe.shape[0]
    n_chunks = (n + chunk - 1) // chunk
    for c in nb.prange(n_chunks):
        lo = c * chunk
        hi = min(n, lo + chunk)
        _score_range(xs, ys, angs, xs_a, ys_a, angs_a, xs_x, ys_x, angs_x, idx_x, offsets,
                     probe, gallery, lo, hi, tol, atol, wx, wy, wt, scale, cos_t, sin_t,
                     cap, out)


# -- python surface -----------------------------------------------------------------


@dataclass
class PackedTemplates:
    """Minutiae of many templates in flat arrays.

    Template ``i`` owns ``offsets[i]:offsets[i + 1]`` in each of the three
    orderings (record order, by angle, by x).
    """

    xs: np.ndarray
    ys: np.ndarray
    angles: np.ndarray
    offsets: np.ndarray
    xs_a: np.ndarray
    ys_a: np.ndarray
    angles_a: np.ndarray
    xs_x: np.ndarray
    ys_x: np.ndarray
    angles_x: np.ndarray
    idx_x: np.ndarray

    @classmethod
    def from_templates(cls, templates: Sequence[MinutiaTemplate]) -> PackedTemplates:
        counts = np.fromiter((len(t.minutiae) for t in templates), np.int64, len(templates))
        offsets = np.zeros(len(templates) + 1, np.int64)
        np.cumsum(counts, out=offsets[1:])
        total = int(offsets[-1])
        xs = np.empty(total, np.float64)
        ys = np.empty(total, np.float64)
        angles = np.empty(total, np.int64)
        by_angle = np.empty(total, np.int64)
        by_x = np.empty(total, np.int64)
        for i, t in enumerate(templates):
            a, b = offsets[i], offsets[i + 1]
            for k, m in enumerate(t.minutiae, start=a):
                xs[k] = m.x
                ys[k] = m.y
                angles[k] = m.angle
            by_angle[a:b] = a + np.argsort(angles[a:b], kind="stable")
            by_x[a:b] = a + np.argsort(xs[a:b], kind="stable")
        local = np.arange(total, dtype=np.int64) - np.repeat(offsets[:-1], counts)
        return cls(
            xs, ys, angles, offsets,
            xs[by_angle], ys[by_angle], angles[by_angle],
            xs[by_x], ys[by_x], angles[by_x], local[by_x],
        )

    def __len__(self) -> int:
        return len(self.offsets) - 1

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (
            self.xs, self.ys, self.angles, self.xs_a, self.ys_a, self.angles_a,
            self.xs_x, self.ys_x, self.angles_x, self.idx_x, self.offsets,
        )

    def max_count(self) -> int:
        return int(np.diff(self.offsets).max(initial=0))


def estimate_alignment(
    probe: MinutiaTemplate, gallery: MinutiaTemplate, params: MatcherParams = MatcherParams()
) -> Alignment:
    """Rigid motion taking gallery coordinates onto probe coordinates.

    Falls back to the identity when no minutia pair has compatible angles.
    """
    if not probe.minutiae or not gallery.minutiae:
        raise EmptyTemplate("alignment needs at least one minutia in each template")
    packed = PackedTemplates.from_templates([probe, gallery])
    n_p, n_g = len(probe.minutiae), len(gallery.minutiae)
    wx, wy, wt = params.alignment_bins
    keys = np.empty(n_p * n_g, np.int64)
    vids = np.empty(n_p * n_g, np.int64)
    _, dx, dy, dt = _align(
        packed.xs[:n_p], packed.ys[:n_p], packed.angles[:n_p],
        packed.xs_a[n_p:], packed.ys_a[n_p:], packed.angles_a[n_p:],
        params.angle_tolerance, float(wx), float(wy), float(wt),
        COS_TABLE, SIN_TABLE, keys, vids,
    )
    return Alignment(int(dx), int(dy), int(dt))


def match_score(
    probe: MinutiaTemplate, gallery: MinutiaTemplate, params: MatcherParams = MatcherParams()
) -> float:
    """Similarity in ``[0, params.score_scale]``; 0 if either side is empty."""
    packed = PackedTemplates.from_templates([probe, gallery])
    one = np.zeros(1, np.int64)
    return float(score_pairs(packed, one, one + 1, params)[0])


def score_pairs(
    packed: PackedTemplates,
    probe_idx: np.ndarray,
    gallery_idx: np.ndarray,
    params: MatcherParams = MatcherParams(),
    workers: int | None = 1,
    chunk: int = 4096,
) -> np.ndarray:
    """Score many (probe, gallery) index pairs at once.

    ``workers=1`` runs in the calling thread; anything else spreads chunks
    of ``chunk`` pairs over that many numba threads (``None`` keeps numba's
    default).  Each score depends only on its own pair, so the output is
    identical either way.
    """
    probe_idx = np.ascontiguousarray(probe_idx, dtype=np.int64)
    gallery_idx = np.ascontiguousarray(gallery_idx, dtype=np.int64)
    if probe_idx.shape != gallery_idx.shape:
        raise ValueError("probe and gallery index arrays differ in length")
    out = np.empty(probe_idx.shape[0], np.float64)
    if out.size == 0:
        return out
    cap = max(packed.max_count() ** 2, 1)
    wx, wy, wt = params.alignment_bins
    common = (
        float(params.distance_tolerance), params.angle_tolerance,
        float(wx), float(wy), float(wt), float(params.score_scale),
        COS_TABLE, SIN_TABLE, cap, out,
    )
    if workers == 1:
        _score_range(*packed.arrays(), probe_idx, gallery_idx, 0, out.size, *common)
        return out
    previous = nb.get_num_threads()
    if workers is not None:
        nb.set_num_threads(max(1, min(workers, nb.config.NUMBA_NUM_THREADS)))
    try:
        _score_chunks(*packed.arrays(), probe_idx, gallery_idx, chunk, *common)
    finally:
        nb.set_num_threads(previous)
    return out
