import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from phalanx_fusion.errors import DegenerateVariance, EmptySamples, EmptyScoreList, RangeError, Unattainable
from phalanx_fusion.evaluation import (
    clopper_pearson,
    eer,
    eer_index,
    gar_at_far,
    integer_bins,
    operating_point_json,
    pearson_correlation,
    roc_curve,
    summarize_distribution,
    write_roc_csv,
)

GEN = [3, 5, 7]
IMP = [1, 2, 4, 6]


def brute_roc(gen, imp, t):
    return sum(s >= t for s in imp) / len(imp), sum(s >= t for s in gen) / len(gen)


class TestSmallExample:
    def test_curve(self):
        c = roc_curve(GEN, IMP)
        assert c.thresholds.tolist() == [1, 2, 3, 4, 5, 6, 7, math.inf]
        assert c.false_accepts.tolist() == [4, 3, 2, 2, 1, 1, 0, 0]
        assert c.genuine_accepts.tolist() == [3, 3, 3, 2, 2, 1, 1, 0]

    def test_eer(self):
        c = roc_curve(GEN, IMP)
        assert c.thresholds[eer_index(c)] == 5
        assert eer(c) == pytest.approx((0.25 + 1 / 3) / 2, abs=1e-12)

    def test_gar_at_far(self):
        op = gar_at_far(roc_curve(GEN, IMP), 0.25)
        assert (op.threshold, op.far, op.genuine_accepted) == (5.0, 0.25, 2)
        assert op.gar == pytest.approx(2 / 3)

    def test_unattainable(self):
        # no finite threshold rejects the best imposter when it ties the top genuine
        c = roc_curve([5, 9], [9, 1, 2])
        with pytest.raises(Unattainable):
            gar_at_far(c, 0.1)

    def test_far_target_range(self):
        with pytest.raises(RangeError):
            gar_at_far(roc_curve(GEN, IMP), 0.0)

    def test_empty_and_nan(self):
        with pytest.raises(EmptyScoreList):
            roc_curve([], IMP)
        with pytest.raises(RangeError):
            roc_curve([1.0, float("nan")], IMP)


def test_perfect_separation():
    c = roc_curve([80, 90, 100], [0, 5, 10])
    assert eer(c) == 0.0
    op = gar_at_far(c, 1e-6)
    assert op.gar == 1.0 and op.far == 0.0


def test_identical_distributions():
    s = list(range(100))
    assert eer(roc_curve(s, s)) == pytest.approx(0.5, abs=0.01)


score_lists = st.lists(st.integers(0, 30).map(float), min_size=1, max_size=25)


@given(score_lists, score_lists)
def test_curve_matches_brute_force(gen, imp):
    c = roc_curve(gen, imp)
    for t, f, g in zip(c.thresholds, c.far, c.gar):
        assert (f, g) == brute_roc(gen, imp, t)
    assert np.all(np.diff(c.far) <= 0) and np.all(np.diff(c.gar) <= 0)


@given(score_lists, score_lists)
def test_eer_matches_brute_force(gen, imp):
    ng, ni = len(gen), len(imp)
    best = None
    for t in sorted(set(gen) | set(imp)) + [math.inf]:
        fa = sum(s >= t for s in imp)
        fr = sum(s < t for s in gen)
        gap = abs(fa * ng - fr * ni)
        if best is None or gap < best[0]:
            best = (gap, (fa / ni + fr / ng) / 2)
    assert eer(roc_curve(gen, imp)) == best[1]


@given(score_lists, score_lists, st.floats(0.01, 1.0))
def test_gar_at_far_matches_brute_force(gen, imp, target):
    ok = [t for t in sorted(set(gen) | set(imp)) if brute_roc(gen, imp, t)[0] <= target]
    c = roc_curve(gen, imp)
    if not ok:
        with pytest.raises(Unattainable):
            gar_at_far(c, target)
        return
    op = gar_at_far(c, target)
    assert op.threshold == ok[0]
    assert op.gar == brute_roc(gen, imp, ok[0])[1]


@given(score_lists, score_lists)
def test_monotone_transform_invariance(gen, imp):
    a = roc_curve(gen, imp)
    b = roc_curve([3 * s + 7 for s in gen], [3 * s + 7 for s in imp])
    assert np.array_equal(a.far, b.far) and np.array_equal(a.gar, b.gar)
    assert eer(a) == eer(b)


class TestClopperPearson:
    def test_known_example(self):
        lo, hi = clopper_pearson(19, 20)
        assert lo == pytest.approx(0.75127, abs=1e-5)
        assert hi == pytest.approx(0.99873, abs=1e-5)

    def test_boundaries(self):
        assert clopper_pearson(0, 10)[0] == 0.0
        assert clopper_pearson(10, 10)[1] == 1.0
        assert clopper_pearson(0, 10)[1] == pytest.approx(1 - 0.025 ** (1 / 10), abs=1e-9)

    @given(st.integers(1, 400).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
    def test_against_beta_quantiles(self, kn):
        k, n = kn
        lo, hi = clopper_pearson(k, n)
        ref_lo = 0.0 if k == 0 else stats.beta.ppf(0.025, k, n - k + 1)
        ref_hi = 1.0 if k == n else stats.beta.ppf(0.975, k + 1, n - k)
        assert lo == pytest.approx(ref_lo, abs=1e-8)
        assert hi == pytest.approx(ref_hi, abs=1e-8)
        assert lo <= k / n <= hi

    def test_nesting_and_shrinking(self):
        lo90, hi90 = clopper_pearson(30, 50, 0.90)
        lo95, hi95 = clopper_pearson(30, 50, 0.95)
        assert lo95 < lo90 and hi90 < hi95
        w = [np.subtract(*clopper_pearson(6 * m, 10 * m)[::-1]) for m in (1, 10, 100)]
        assert w[0] > w[1] > w[2]

    @pytest.mark.parametrize("k,n", [(-1, 5), (6, 5), (0, 0)])
    def test_invalid(self, k, n):
        with pytest.raises(RangeError):
            clopper_pearson(k, n)


class TestPearson:
    def test_value(self):
        assert pearson_correlation([1, 2, 3], [1, 2, 4]) == pytest.approx(0.98198, abs=1e-5)

    @given(
        st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=3, max_size=30),
        st.floats(0.1, 10), st.floats(-50, 50),
    )
    def test_affine_invariance(self, xy, a, b):
        x, y = map(np.array, zip(*xy))
        if np.ptp(x) < 1e-3 or np.ptp(y) < 1e-3:
            return
        r = pearson_correlation(x, y)
        assert -1 <= r <= 1
        assert pearson_correlation(a * x + b, y) == pytest.approx(r, abs=1e-9)
        assert pearson_correlation(x, y) == pytest.approx(pearson_correlation(y, x), abs=1e-12)

    def test_errors(self):
        with pytest.raises(DegenerateVariance):
            pearson_correlation([1, 1, 1], [1, 2, 3])
        with pytest.raises(EmptySamples):
            pearson_correlation([1], [1])
        with pytest.raises(RangeError):
            pearson_correlation([1, 2], [1, 2, 3])


class TestSummary:
    def test_moments(self):
        s = summarize_distribution([1, 2, 3, 4, 5], integer_bins(1, 5))
        assert s.mean == 3 and s.std == pytest.approx(math.sqrt(2.5))
        assert s.counts == (1, 1, 1, 1, 1)

    def test_out_of_range_folded(self):
        s = summarize_distribution([-5, 1, 99], integer_bins(1, 3))
        assert s.counts == (2, 0, 1) and sum(s.counts) == s.n

    def test_single_and_empty(self):
        assert summarize_distribution([4.0]).std == 0.0
        with pytest.raises(EmptySamples):
            summarize_distribution([])


def test_roc_csv_and_json(tmp_path):
    c = roc_curve(GEN, IMP)
    write_roc_csv(c, tmp_path / "roc.csv")
    lines = (tmp_path / "roc.csv").read_text().splitlines()
    assert lines[0] == "threshold,far,gar"
    assert lines[1] == "inf,0.0,0.0" and lines[-1] == "1.0,1.0,1.0"
    j = operating_point_json(gar_at_far(c, 0.25))
    assert j["gar_percent"] == 66.7 and j["gar"] == 0.666667
