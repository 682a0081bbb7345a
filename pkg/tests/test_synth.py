import json

import numpy as np
import pytest

from phalanx_fusion.codec import parse_template, serialize_template
from phalanx_fusion.errors import ConfigError
from phalanx_fusion.matcher import MatcherParams, match_score
from phalanx_fusion.protocol import Finger, Hand, load_manifest
from phalanx_fusion.synth import (
    IMAGE_HEIGHT,
    IMAGE_WIDTH,
    SynthConfig,
    generate_dataset,
    generate_phalanx,
    generate_templates,
    phalanx_rng,
)

SMALL = SynthConfig(n_subjects=2, seed=11)


def test_philox_known_answer():
    # Random123 philox4x64-10 vector for counter 0, key 0.  numpy increments
    # the counter before each block, so start one below zero.
    g = np.random.Philox(counter=2**256 - 1, key=0)
    assert [int(v) for v in g.random_raw(4)] == [
        0x16554D9ECA36314C, 0xDB20FE9D672D0FDC, 0xD7E772CEE186176B, 0x7E68B68AEC7BA23B,
    ]


@pytest.mark.parametrize(
    "key,expected",
    [
        ((0, 0, Hand.LEFT, Finger.INDEX, 1), [0x464AFFA64E32A1A1, 0x4EF35C7840249F55]),
        ((7, 3, Hand.RIGHT, Finger.RING, 2), [0x3741BC6B7C510985, 0xE15CC018AC295137]),
    ],
)
def test_phalanx_stream_vectors(key, expected):
    assert [int(v) for v in phalanx_rng(*key).bit_generator.random_raw(2)] == expected


def test_streams_are_independent_of_iteration_order():
    a = generate_phalanx(SMALL, 1, Hand.RIGHT, Finger.MIDDLE, 3)
    _ = generate_phalanx(SMALL, 0, Hand.LEFT, Finger.INDEX, 1)
    b = generate_phalanx(SMALL, 1, Hand.RIGHT, Finger.MIDDLE, 3)
    assert a == b


def test_dataset_size(tmp_path):
    manifest = generate_dataset(SMALL, tmp_path)
    # 2 subjects x 2 hands x 4 fingers x 3 phalanges x 4 impressions
    assert len(manifest) == 192
    assert len(list((tmp_path / "templates").glob("*.fmr"))) == 192
    assert load_manifest(tmp_path / "manifest.json").digest() == manifest.digest()
    assert SynthConfig.load(tmp_path / "synth_config.json") == SMALL


def test_thumbs_have_two_phalanges():
    _, entries = generate_templates(SynthConfig(n_subjects=1, include_thumbs=True, impressions=1))
    thumbs = {e.phalanx for e in entries if e.finger is Finger.THUMB}
    assert thumbs == {1, 3} and len(entries) == 2 * (4 * 3 + 2)


def test_deterministic_bytes(tmp_path):
    generate_dataset(SMALL, tmp_path / "a")
    generate_dataset(SMALL, tmp_path / "b")
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_seed_changes_output():
    a, _ = generate_templates(SynthConfig(n_subjects=1, seed=1))
    b, _ = generate_templates(SynthConfig(n_subjects=1, seed=2))
    assert a != b


def test_templates_valid_and_in_bounds():
    templates, entries = generate_templates(SMALL)
    for e in entries:
        t = templates[e.template_id]
        assert 1 <= t.nfiq <= 5 and t.nfiq == e.nfiq
        assert parse_template(serialize_template(t), nfiq=t.nfiq) == t
        for m in t.minutiae:
            assert 0 <= m.x < IMAGE_WIDTH and 0 <= m.y < IMAGE_HEIGHT and 0 <= m.angle < 256


def test_noiseless_impressions_identical():
    config = SynthConfig(n_subjects=2, seed=5).noiseless()
    templates, entries = generate_templates(config)
    params = MatcherParams()
    by_phalanx = {}
    for e in entries:
        by_phalanx.setdefault((e.subject_id, e.hand, e.finger, e.phalanx), []).append(templates[e.template_id])
    for imps in by_phalanx.values():
        geometry = [[(m.x, m.y, m.angle, m.mtype) for m in t.minutiae] for t in imps]
        assert all(g == geometry[0] for g in geometry)
        assert match_score(imps[0], imps[1], params) == 100.0


def test_proximal_phalanges_carry_more_minutiae():
    templates, entries = generate_templates(SynthConfig(n_subjects=10, seed=3))
    mean = {
        p: np.mean([len(templates[e.template_id].minutiae) for e in entries if e.phalanx == p])
        for p in (1, 2, 3)
    }
    assert mean[2] > mean[1] and mean[3] > mean[1]


class TestConfig:
    def test_round_trip(self):
        d = SMALL.to_dict()
        assert SynthConfig.from_dict(json.loads(json.dumps(d))) == SMALL

    def test_partial_dict_merges_defaults(self):
        c = SynthConfig.from_dict({"n_subjects": 3, "phalanges": {"2": {"jitter_sigma": 1.0}}})
        assert c.n_subjects == 3
        assert c.phalanges[2].jitter_sigma == 1.0
        assert c.phalanges[2].minutiae_mean == SynthConfig().phalanges[2].minutiae_mean

    @pytest.mark.parametrize(
        "d",
        [
            {"n_subjects": 0},
            {"impressions": 5},
            {"fingers_per_hand": 5},
            {"seed": -1},
            {"transform_range": [1, 2]},
            {"phalanges": {"1": {"deletion_rate": 1.5}}},
            {"phalanges": {"1": {"nfiq_distribution": [0.5, 0.5, 0.5, 0, 0]}}},
            {"bogus": 1},
        ],
    )
    def test_invalid(self, d):
        with pytest.raises(ConfigError):
            SynthConfig.from_dict(d)
