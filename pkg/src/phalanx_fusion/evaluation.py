"""ROC curves, operating points, exact binomial intervals and summaries.

Rates are kept as integer counts; floats appear only when a caller asks
for a fraction.  A comparison is accepted when ``score >= threshold``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateVariance, EmptySamples, EmptyScoreList, RangeError, Unattainable


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    far: float
    gar: float


@dataclass(frozen=True)
class RocCurve:
    """Step ROC over ascending thresholds.

    ``thresholds`` holds every distinct observed score followed by ``+inf``
    (nothing accepted).  ``false_accepts[i]`` / ``genuine_accepts[i]`` count
    scores ``>= thresholds[i]``.
    """

    thresholds: np.ndarray
    false_accepts: np.ndarray
    genuine_accepts: np.ndarray
    n_genuine: int
    n_imposter: int

    def __len__(self) -> int:
        return int(self.thresholds.shape[0])

    @property
    def far(self) -> np.ndarray:
        return self.false_accepts / self.n_imposter

    @property
    def gar(self) -> np.ndarray:
        return self.genuine_accepts / self.n_genuine

    @property
    def points(self) -> list[RocPoint]:
        far, gar = self.far, self.gar
        return [RocPoint(float(t), float(f), float(g)) for t, f, g in zip(self.thresholds, far, gar)]

    def at(self, threshold: float) -> tuple[int, int]:
        """(false accepts, genuine accepts) at an arbitrary threshold."""
        i = int(np.searchsorted(self.thresholds, threshold, side="left"))
        return int(self.false_accepts[i]), int(self.genuine_accepts[i])


@dataclass(frozen=True)
class OperatingPoint:
    far_target: float
    threshold: float
    far: float
    gar: float
    gar_ci: tuple[float, float]
    genuine_accepted: int
    n_genuine: int
    n_imposter: int


def _as_scores(values: Sequence[float] | np.ndarray, label: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptyScoreList(f"{label} score list is empty")
    if np.isnan(arr).any():
        raise RangeError(f"{label} scores contain NaN")
    return arr


def roc_curve(genuine: Sequence[float] | np.ndarray, imposter: Sequence[float] | np.ndarray) -> RocCurve:
    gen = np.sort(_as_scores(genuine, "genuine"))
    imp = np.sort(_as_scores(imposter, "imposter"))
    thresholds = np.append(np.union1d(gen, imp), np.inf)
    ga = gen.size - np.searchsorted(gen, thresholds, side="left")
    fa = imp.size - np.searchsorted(imp, thresholds, side="left")
    return RocCurve(thresholds, fa.astype(np.int64), ga.astype(np.int64), int(gen.size), int(imp.size))


def gar_at_far(curve: RocCurve, far_target: float, confidence: float = 0.95) -> OperatingPoint:
    """GAR at the lowest observed threshold whose FAR does not exceed the target."""
    if not 0.0 < far_target <= 1.0:
        raise RangeError(f"far_target={far_target} outside (0, 1]")
    finite = curve.thresholds[:-1]
    ok = np.flatnonzero(curve.far[:-1] <= far_target)
    if ok.size == 0:
        raise Unattainable(far_target, curve.n_imposter)
    i = int(ok[0])
    k = int(curve.genuine_accepts[i])
    return OperatingPoint(
        far_target=far_target,
        threshold=float(finite[i]),
        far=float(curve.false_accepts[i] / curve.n_imposter),
        gar=k / curve.n_genuine,
        gar_ci=clopper_pearson(k, curve.n_genuine, confidence),
        genuine_accepted=k,
        n_genuine=curve.n_genuine,
        n_imposter=curve.n_imposter,
    )


def eer_index(curve: RocCurve) -> int:
    """Index of the threshold minimising |FAR - FRR| (first one on ties).

    Both rates share the denominator ``n_genuine * n_imposter``, so the
    comparison is done on exact integers.
    """
    fr = curve.n_genuine - curve.genuine_accepts
    gap = np.abs(curve.false_accepts * curve.n_genuine - fr * curve.n_imposter)
    return int(np.argmin(gap))


def eer(curve: RocCurve) -> float:
    i = eer_index(curve)
    far = curve.false_accepts[i] / curve.n_imposter
    frr = (curve.n_genuine - curve.genuine_accepts[i]) / curve.n_genuine
    return float((far + frr) / 2.0)


# -- exact binomial interval ------------------------------------------------------


_LGAMMA = np.vectorize(math.lgamma, otypes=[np.float64])


def _tail_ge(k: int, n: int, p: float, log_binom: np.ndarray) -> float:
    """P(X >= k) for X ~ Binomial(n, p), 0 < p < 1."""
    i = np.arange(k, n + 1, dtype=np.float64)
    terms = log_binom[k:] + i * math.log(p) + (n - i) * math.log1p(-p)
    m = terms.max()
    return float(math.exp(m) * np.exp(terms - m).sum())


def _tail_le(k: int, n: int, p: float, log_binom: np.ndarray) -> float:
    """P(X <= k)."""
    i = np.arange(0, k + 1, dtype=np.float64)
    terms = log_binom[: k + 1] + i * math.log(p) + (n - i) * math.log1p(-p)
    m = terms.max()
    return float(math.exp(m) * np.exp(terms - m).sum())


def _bisect(pred, tol: float) -> float:
    """Smallest p in (0, 1) with pred(p) true, for a monotone false->true pred."""
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def clopper_pearson(k: int, n: int, confidence: float = 0.95, tol: float = 1e-10) -> tuple[float, float]:
    """Exact two-sided binomial interval for ``k`` successes out of ``n``."""
    if isinstance(k, bool) or isinstance(n, bool) or int(k) != k or int(n) != n:
        raise RangeError("k and n must be integers")
    k, n = int(k), int(n)
    if n < 1 or not 0 <= k <= n:
        raise RangeError(f"need 0 <= k <= n and n >= 1, got k={k}, n={n}")
    if not 0.0 < confidence < 1.0:
        raise RangeError(f"confidence={confidence} outside (0, 1)")
    alpha = 1.0 - confidence
    i = np.arange(n + 1, dtype=np.float64)
    log_binom = math.lgamma(n + 1) - _LGAMMA(i + 1) - _LGAMMA(n - i + 1)

    if k == 0:
        lower = 0.0
    else:
        # P(X >= k) grows with p
        lower = _bisect(lambda p: _tail_ge(k, n, p, log_binom) >= alpha / 2, tol)
    if k == n:
        upper = 1.0
    else:
        # P(X <= k) falls with p; the supremum is where it drops below alpha/2
        upper = _bisect(lambda p: _tail_le(k, n, p, log_binom) < alpha / 2, tol)
    return lower, upper


# -- correlation & distributions -----------------------------------------------------


def pearson_correlation(x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray) -> float:
    xa = np.asarray(x, dtype=np.float64).ravel()
    ya = np.asarray(y, dtype=np.float64).ravel()
    if xa.size != ya.size:
        raise RangeError(f"x has {xa.size} values but y has {ya.size}")
    if xa.size < 2:
        raise EmptySamples("correlation needs at least two paired values")
    if np.all(xa == xa[0]) or np.all(ya == ya[0]):
        raise DegenerateVariance("one of the inputs is constant")
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    r = float(np.dot(dx, dy) / math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy))))
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class DistributionStats:
    n: int
    mean: float
    std: float  # sample standard deviation; 0 for a single sample
    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "mean": round(self.mean, 6),
            "std": round(self.std, 6),
            "bin_edges": list(self.bin_edges),
            "counts": list(self.counts),
        }


def integer_bins(lo: int, hi: int) -> np.ndarray:
    """Edges giving one bin per integer in ``lo..hi``."""
    return np.arange(lo, hi + 2, dtype=np.float64) - 0.5


def summarize_distribution(
    samples: Sequence[float] | np.ndarray, bins: int | Sequence[float] | np.ndarray = 10
) -> DistributionStats:
    """Mean, sample std and histogram.

    With explicit edges, values outside them are folded into the first or
    last bin so the histogram mass always equals the sample count.
    """
    arr = np.asarray(samples, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptySamples("no samples to summarise")
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    if np.isscalar(bins):
        counts, edges = np.histogram(arr, bins=int(bins))
    else:
        edges = np.asarray(bins, dtype=np.float64)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise RangeError("bin edges must be a strictly increasing sequence of length >= 2")
        counts, _ = np.histogram(np.clip(arr, edges[0], edges[-1]), bins=edges)
    return DistributionStats(
        int(arr.size), mean, std, tuple(float(e) for e in edges), tuple(int(c) for c in counts)
    )


# -- output -----------------------------------------------------------------------


def write_roc_csv(curve: RocCurve, path: str | Path) -> None:
    """``threshold,far,gar`` in descending threshold order.

    Rates are written with full double precision because FAR steps at
    these sample sizes are far below 1e-6.
    """
    far = curve.far.tolist()
    gar = curve.gar.tolist()
    thr = curve.thresholds.tolist()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "far", "gar"])
        for i in range(len(thr) - 1, -1, -1):
            w.writerow([repr(thr[i]), repr(far[i]), repr(gar[i])])


def operating_point_json(op: OperatingPoint) -> dict:
    lo, hi = op.gar_ci
    return {
        "far_target": op.far_target,
        "attainable": True,
        "threshold": op.threshold,
        "far": round(op.far, 6),
        "gar": round(op.gar, 6),
        "ci_lower": round(lo, 6),
        "ci_upper": round(hi, 6),
        "gar_percent": round(100 * op.gar, 1),
        "ci_lower_percent": round(100 * lo, 1),
        "ci_upper_percent": round(100 * hi, 1),
        "genuine_accepted": op.genuine_accepted,
        "n_genuine": op.n_genuine,
        "n_imposter": op.n_imposter,
    }
