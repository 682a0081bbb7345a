import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phalanx_fusion.codec import Minutia, MinutiaTemplate, TemplateHeader
from phalanx_fusion.errors import ConfigError, EmptyTemplate
from phalanx_fusion.matcher import (
    Alignment,
    MatcherParams,
    PackedTemplates,
    estimate_alignment,
    match_score,
    score_pairs,
)
from phalanx_fusion.synth import PhalanxModel, SynthConfig, generate_phalanx
from phalanx_fusion.protocol import Hand

from strategies import scattered_templates, templates

P = MatcherParams()


def tpl(points, width=320, height=480):
    return MinutiaTemplate(TemplateHeader(width, height), tuple(Minutia(*p) for p in points), 2)


def translate(t, dx, dy):
    return tpl([(m.x + dx, m.y + dy, m.angle) for m in t.minutiae])


SQUARE = tpl([(100, 100, 10), (200, 120, 60), (150, 300, 200), (60, 400, 130), (250, 350, 90)])


class TestAlignment:
    def test_identity(self):
        assert estimate_alignment(SQUARE, SQUARE) == Alignment(0, 0, 0)

    def test_known_translation(self):
        gallery = translate(SQUARE, 20, -12)
        a = estimate_alignment(SQUARE, gallery)
        wx, wy, wt = P.alignment_bins
        assert abs(a.dx - (-20)) <= wx and abs(a.dy - 12) <= wy
        assert min(a.dtheta, 256 - a.dtheta) <= wt

    def test_incompatible_angles_fall_back_to_identity(self):
        probe = tpl([(50, 50, 0)])
        gallery = tpl([(200, 300, 100)])
        assert estimate_alignment(probe, gallery) == Alignment(0, 0, 0)

    def test_dtheta_wraps(self):
        assert Alignment(1, 2, -3).dtheta == 253

    def test_rotation_is_recovered(self):
        theta = 2 * np.pi * 6 / 256
        c, s = np.cos(theta), np.sin(theta)
        rotated = tpl([
            (int(round(c * m.x - s * m.y)) + 120, int(round(s * m.x + c * m.y)) + 10, (m.angle + 6) % 256)
            for m in SQUARE.minutiae
        ])
        # gallery rotated by +6 units relative to probe; alignment maps it back
        a = estimate_alignment(SQUARE, rotated)
        assert min(abs(a.dtheta - 250), 256 - abs(a.dtheta - 250)) <= P.alignment_bins[2]
        assert match_score(SQUARE, rotated) == P.score_scale

    @pytest.mark.parametrize("empty_side", ["probe", "gallery"])
    def test_empty_template_raises(self, empty_side):
        empty = tpl([])
        with pytest.raises(EmptyTemplate):
            if empty_side == "probe":
                estimate_alignment(empty, SQUARE)
            else:
                estimate_alignment(SQUARE, empty)


class TestScore:
    def test_self_match(self):
        assert match_score(SQUARE, SQUARE) == 100.0

    def test_empty_scores_zero(self):
        assert match_score(tpl([]), SQUARE) == 0.0
        assert match_score(tpl([]), tpl([])) == 0.0

    def test_disjoint_scores_zero(self):
        probe = tpl([(10 * i, 20 * i, 0) for i in range(1, 10)])
        gallery = tpl([(10 * i, 20 * i, 128) for i in range(1, 10)])
        assert match_score(probe, gallery) == 0.0

    def test_formula_penalises_extra_minutiae(self):
        # two extra probe minutiae that cannot pair with anything
        probe = tpl([(m.x, m.y, m.angle) for m in SQUARE.minutiae] + [(5, 5, 170), (310, 5, 170)])
        assert match_score(probe, SQUARE) == pytest.approx(100 * 5**2 / (7 * 5))

    def test_displaced_minutia_stays_unmatched(self):
        # one minutia shifted by 30 px: after the 4-minutia alignment it stays unmatched
        moved = tpl([(m.x, m.y, m.angle) for m in SQUARE.minutiae[:4]] + [(250 + 30, 350, 90)])
        assert match_score(SQUARE, moved) == pytest.approx(100 * 16 / 25)

    def test_score_scale(self):
        assert match_score(SQUARE, SQUARE, MatcherParams(score_scale=1)) == 1.0


@settings(max_examples=60)
@given(scattered_templates())
def test_self_match_maximal(t):
    assert match_score(t, t) == P.score_scale


@settings(max_examples=60)
@given(scattered_templates(max_minutiae=60, width=200, height=300), st.integers(0, 119), st.integers(0, 179))
def test_translation_robust(t, dx, dy):
    shifted = tpl([(m.x + dx, m.y + dy, m.angle) for m in t.minutiae])
    assert match_score(t, shifted) == P.score_scale


@settings(max_examples=60)
@given(templates(max_minutiae=40), templates(max_minutiae=40))
def test_range_and_determinism(a, b):
    s = match_score(a, b)
    assert 0.0 <= s <= P.score_scale
    assert match_score(a, b) == s


def test_parallel_equals_serial():
    rng = np.random.default_rng(3)
    ts = [
        tpl([(int(x), int(y), int(a)) for x, y, a in zip(rng.integers(0, 320, n), rng.integers(0, 480, n), rng.integers(0, 256, n))])
        for n in rng.integers(0, 90, 40)
    ]
    packed = PackedTemplates.from_templates(ts)
    p = rng.integers(0, 40, 3000)
    g = rng.integers(0, 40, 3000)
    serial = score_pairs(packed, p, g, P, workers=1)
    parallel = score_pairs(packed, p, g, P, workers=4, chunk=97)
    assert serial.tobytes() == parallel.tobytes()
    assert serial[5] == match_score(ts[p[5]], ts[g[5]])


class TestParams:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"distance_tolerance": 0},
            {"angle_tolerance": 0},
            {"angle_tolerance": 128},
            {"alignment_bins": (10, 0, 8)},
            {"alignment_bins": (10, 10)},
            {"score_scale": 0},
        ],
    )
    def test_rejects_nonpositive(self, kwargs):
        with pytest.raises(ConfigError):
            MatcherParams(**kwargs)

    def test_dict_round_trip(self):
        p = MatcherParams(distance_tolerance=12.0, alignment_bins=(8.0, 8.0, 4))
        assert MatcherParams.from_dict(p.to_dict()) == p
        assert p.digest() != P.digest()

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            MatcherParams.from_dict({"tolerance": 3})


def _single_model_config(jitter, deletion, spurious, n_subjects):
    model = PhalanxModel(62, 16, jitter, deletion, spurious, (0, 1, 0, 0, 0))
    return SynthConfig(n_subjects=n_subjects, phalanges={1: model, 2: model, 3: model}, seed=11)


def _genuine_and_imposter(config):
    fingers = [
        generate_phalanx(config, s, h, f, 1)
        for s in range(config.n_subjects)
        for h in (Hand.LEFT, Hand.RIGHT)
        for f in config.fingers
    ]
    genuine = [match_score(imps[0], imps[1]) for imps in fingers]
    return fingers, genuine


def test_genuine_beats_mean_imposter():
    config = _single_model_config(3.0, 0.1, 0.1, n_subjects=7)
    fingers, genuine = _genuine_and_imposter(config)
    rng = np.random.default_rng(0)
    imposter = []
    while len(imposter) < 100:
        i, j = rng.integers(0, len(fingers), 2)
        if i != j:
            imposter.append(match_score(fingers[i][0], fingers[j][1]))
    assert genuine[0] > np.mean(imposter)
    assert np.mean(genuine) > 5 * np.mean(imposter)


def test_monotone_degradation_in_jitter():
    means = []
    for sigma in (1.0, 3.0, 6.0):
        _, genuine = _genuine_and_imposter(_single_model_config(sigma, 0.1, 0.1, n_subjects=13))
        assert len(genuine) >= 100
        means.append(np.mean(genuine))
    assert means[0] >= means[1] >= means[2]
