"""Seeded synthetic phalanx database.

Layout mirrors a real multi-phalanx collection: subjects x hands x fingers x
phalanges x impressions.  Each (subject, hand, finger, phalanx) owns a master
minutiae set; every impression is a noisy, rigidly moved copy of it.

All randomness comes from numpy's Philox-4x64 counter-based generator.  The
stream for one phalanx is seeded with
``SeedSequence(seed, spawn_key=(subject, hand, finger, phalanx))`` where hand
is 0 for left / 1 for right and finger is the position in
``(thumb, index, middle, ring, little)``.  Both SeedSequence hashing and
Philox are specified independently of platform word order; the test suite
pins the first outputs as test vectors.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .codec import FILE_SUFFIX, Minutia, MinutiaTemplate, MinutiaType, TemplateHeader, write_template
from .errors import ConfigError
from .protocol import (
    NON_THUMB_FINGERS,
    THUMB_PHALANGES,
    DatasetManifest,
    Finger,
    Hand,
    ManifestEntry,
    Phalanx,
    TemplateKey,
    finger_position,
    save_manifest,
    session_for,
)

IMAGE_WIDTH = 320
IMAGE_HEIGHT = 480
_FINGER_INDEX = {f: i for i, f in enumerate(Finger)}
_HAND_INDEX = {Hand.LEFT: 0, Hand.RIGHT: 1}


@dataclass(frozen=True)
class PhalanxModel:
    """Generation parameters for one phalanx type."""

    minutiae_mean: float
    minutiae_std: float
    jitter_sigma: float
    deletion_rate: float
    spurious_rate: float
    nfiq_distribution: tuple[float, float, float, float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "nfiq_distribution", tuple(float(p) for p in self.nfiq_distribution))

    def validate(self, label: str) -> None:
        if self.minutiae_mean <= 0:
            raise ConfigError(f"{label}: minutiae_mean must be positive")
        if self.minutiae_std < 0 or self.jitter_sigma < 0:
            raise ConfigError(f"{label}: standard deviations must be non-negative")
        for name in ("deletion_rate", "spurious_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{label}: {name}={v} outside [0, 1]")
        p = self.nfiq_distribution
        if len(p) != 5 or any(x < 0 for x in p):
            raise ConfigError(f"{label}: nfiq_distribution needs 5 non-negative probabilities")
        if abs(math.fsum(p) - 1.0) > 1e-9:
            raise ConfigError(f"{label}: nfiq_distribution sums to {math.fsum(p)}, not 1")


@dataclass(frozen=True)
class QualityModel:
    """Per-NFIQ multipliers on jitter and on the spurious-minutia rate."""

    multipliers: Mapping[int, tuple[float, float]] = field(
        default_factory=lambda: {
            1: (0.75, 0.75),
            2: (1.0, 1.0),
            3: (1.25, 1.25),
            4: (1.75, 1.5),
            5: (2.5, 2.0),
        }
    )

    def validate(self) -> None:
        if sorted(self.multipliers) != [1, 2, 3, 4, 5]:
            raise ConfigError("quality model needs multipliers for NFIQ 1..5")
        prev = (0.0, 0.0)
        for q in range(1, 6):
            jm, sm = self.multipliers[q]
            if jm < 0 or sm < 0:
                raise ConfigError(f"quality multipliers for NFIQ {q} must be non-negative")
            if jm < prev[0] or sm < prev[1]:
                raise ConfigError("quality multipliers must not decrease as NFIQ worsens")
            prev = (jm, sm)

    def jitter(self, nfiq: int) -> float:
        return self.multipliers[nfiq][0]

    def spurious(self, nfiq: int) -> float:
        return self.multipliers[nfiq][1]


def _default_phalanges() -> dict[int, PhalanxModel]:
    return {
        1: PhalanxModel(62, 16, 3.5, 0.25, 0.25, (0.35, 0.35, 0.2, 0.07, 0.03)),
        2: PhalanxModel(83, 23, 4.0, 0.30, 0.35, (0.15, 0.3, 0.3, 0.15, 0.1)),
        3: PhalanxModel(94, 30, 4.5, 0.35, 0.45, (0.05, 0.15, 0.3, 0.3, 0.2)),
    }


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 50
    fingers_per_hand: int = 4
    include_thumbs: bool = False
    impressions: int = 4
    phalanges: Mapping[int, PhalanxModel] = field(default_factory=_default_phalanges)
    quality: QualityModel = field(default_factory=QualityModel)
    transform_range: tuple[float, float, int] = (50.0, 50.0, 4)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "transform_range", tuple(self.transform_range))
        self.validate()

    def validate(self) -> None:
        if self.n_subjects < 1:
            raise ConfigError("n_subjects must be positive")
        if not 1 <= self.fingers_per_hand <= len(NON_THUMB_FINGERS):
            raise ConfigError("fingers_per_hand must be in 1..4 (thumbs are a separate switch)")
        if not 1 <= self.impressions <= 4:
            raise ConfigError("impressions must be in 1..4")
        if sorted(self.phalanges) != [1, 2, 3]:
            raise ConfigError("phalanx models are needed for phalanges 1, 2 and 3")
        for p, model in self.phalanges.items():
            model.validate(f"phalanx {p}")
        self.quality.validate()
        if len(self.transform_range) != 3 or any(v < 0 for v in self.transform_range):
            raise ConfigError("transform_range needs three non-negative values (dx, dy, dtheta)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def fingers(self) -> tuple[Finger, ...]:
        chosen = NON_THUMB_FINGERS[: self.fingers_per_hand]
        return ((Finger.THUMB,) if self.include_thumbs else ()) + chosen

    # -- json ---------------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n_subjects": self.n_subjects,
            "fingers_per_hand": self.fingers_per_hand,
            "include_thumbs": self.include_thumbs,
            "impressions": self.impressions,
            "phalanges": {
                str(p): {**asdict(m), "nfiq_distribution": list(m.nfiq_distribution)}
                for p, m in sorted(self.phalanges.items())
            },
            "quality_multipliers": {
                str(q): list(v) for q, v in sorted(self.quality.multipliers.items())
            },
            "transform_range": list(self.transform_range),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> SynthConfig:
        known = {
            "n_subjects", "fingers_per_hand", "include_thumbs", "impressions",
            "phalanges", "quality_multipliers", "transform_range", "seed",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth config fields: {sorted(unknown)}")
        kwargs: dict = {k: d[k] for k in known & set(d) if k not in ("phalanges", "quality_multipliers")}
        if "phalanges" in d:
            phalanges = _default_phalanges()
            for key, fields in d["phalanges"].items():
                p = int(key)
                if p not in phalanges:
                    raise ConfigError(f"unknown phalanx {key!r}")
                try:
                    merged = {**asdict(phalanges[p]), **fields}
                    phalanges[p] = PhalanxModel(**merged)
                except TypeError as exc:
                    raise ConfigError(f"phalanx {key}: {exc}") from None
            kwargs["phalanges"] = phalanges
        if "quality_multipliers" in d:
            try:
                kwargs["quality"] = QualityModel(
                    {int(q): (float(v[0]), float(v[1])) for q, v in d["quality_multipliers"].items()}
                )
            except (TypeError, ValueError, IndexError) as exc:
                raise ConfigError(f"quality_multipliers: {exc}") from None
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> SynthConfig:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None

    def noiseless(self) -> SynthConfig:
        """Same structure with every noise source switched off."""
        phalanges = {
            p: PhalanxModel(m.minutiae_mean, m.minutiae_std, 0.0, 0.0, 0.0, m.nfiq_distribution)
            for p, m in self.phalanges.items()
        }
        return SynthConfig(
            self.n_subjects, self.fingers_per_hand, self.include_thumbs, self.impressions,
            phalanges, self.quality, (0.0, 0.0, 0), self.seed,
        )


def phalanx_rng(seed: int, subject: int, hand: Hand, finger: Finger, phalanx: int) -> np.random.Generator:
    ss = np.random.SeedSequence(
        seed, spawn_key=(subject, _HAND_INDEX[hand], _FINGER_INDEX[finger], int(phalanx))
    )
    return np.random.Generator(np.random.Philox(ss))


def _master(rng: np.random.Generator, model: PhalanxModel) -> np.ndarray:
    """Rows of (x, y, angle, type) as floats."""
    n = int(round(rng.normal(model.minutiae_mean, model.minutiae_std)))
    n = min(max(n, 1), 255)
    x = rng.uniform(0, IMAGE_WIDTH, n)
    y = rng.uniform(0, IMAGE_HEIGHT, n)
    a = rng.integers(0, 256, n)
    t = rng.integers(1, 3, n)
    return np.column_stack([x, y, a, t]).astype(np.float64)


def _impression(
    rng: np.random.Generator,
    master: np.ndarray,
    model: PhalanxModel,
    quality: QualityModel,
    transform_range: tuple[float, float, int],
    nfiq: int,
) -> np.ndarray:
    rx, ry, rt = transform_range
    dx = rng.uniform(-rx, rx)
    dy = rng.uniform(-ry, ry)
    dt = int(rng.integers(-int(rt), int(rt) + 1))
    theta = 2.0 * np.pi * dt / 256.0
    c, s = math.cos(theta), math.sin(theta)
    cx, cy = IMAGE_WIDTH / 2.0, IMAGE_HEIGHT / 2.0

    keep = rng.random(master.shape[0]) >= model.deletion_rate
    pts = master[keep]
    ox, oy = pts[:, 0] - cx, pts[:, 1] - cy
    x = c * ox - s * oy + cx + dx
    y = s * ox + c * oy + cy + dy
    sigma = model.jitter_sigma * quality.jitter(nfiq)
    x = np.rint(x + rng.normal(0.0, 1.0, x.size) * sigma)
    y = np.rint(y + rng.normal(0.0, 1.0, y.size) * sigma)
    a = (pts[:, 2] + dt) % 256
    t = pts[:, 3]

    lam = model.spurious_rate * quality.spurious(nfiq) * master.shape[0]
    n_sp = int(rng.poisson(lam))
    sx = rng.integers(0, IMAGE_WIDTH, n_sp).astype(np.float64)
    sy = rng.integers(0, IMAGE_HEIGHT, n_sp).astype(np.float64)
    sa = rng.integers(0, 256, n_sp).astype(np.float64)
    st = rng.integers(1, 3, n_sp).astype(np.float64)

    rows = np.column_stack([np.concatenate([x, sx]), np.concatenate([y, sy]),
                            np.concatenate([a, sa]), np.concatenate([t, st])])
    inside = (rows[:, 0] >= 0) & (rows[:, 0] < IMAGE_WIDTH) & (rows[:, 1] >= 0) & (rows[:, 1] < IMAGE_HEIGHT)
    rows = rows[inside][:255]
    order = np.lexsort((rows[:, 2], rows[:, 0], rows[:, 1]))
    return rows[order]


def _nfiq_quality_byte(nfiq: int) -> int:
    return 20 * (6 - nfiq)


def generate_phalanx(
    config: SynthConfig, subject: int, hand: Hand, finger: Finger, phalanx: int
) -> list[MinutiaTemplate]:
    """All impressions of one phalanx, in impression order."""
    model = config.phalanges[int(phalanx)]
    rng = phalanx_rng(config.seed, subject, hand, finger, phalanx)
    master = _master(rng, model)
    out = []
    for imp in range(1, config.impressions + 1):
        nfiq = int(rng.choice(5, p=np.asarray(model.nfiq_distribution))) + 1
        rows = _impression(rng, master, model, config.quality, config.transform_range, nfiq)
        qbyte = _nfiq_quality_byte(nfiq)
        minutiae = tuple(
            Minutia(int(r[0]), int(r[1]), int(r[2]), MinutiaType(int(r[3])), qbyte) for r in rows
        )
        header = TemplateHeader(
            IMAGE_WIDTH, IMAGE_HEIGHT,
            finger_position=finger_position(hand, finger),
            impression_number=imp,
            finger_quality=qbyte,
        )
        out.append(MinutiaTemplate(header, minutiae, nfiq))
    return out


def iter_phalanges(config: SynthConfig):
    for subject in range(config.n_subjects):
        for hand in (Hand.LEFT, Hand.RIGHT):
            for finger in config.fingers:
                phalanges = THUMB_PHALANGES if finger is Finger.THUMB else tuple(Phalanx)
                for p in phalanges:
                    yield subject, hand, finger, Phalanx(p)


def generate_templates(config: SynthConfig) -> tuple[dict[str, MinutiaTemplate], list[ManifestEntry]]:
    """In-memory dataset: templates by id and manifest entries (no files)."""
    templates: dict[str, MinutiaTemplate] = {}
    entries: list[ManifestEntry] = []
    for subject, hand, finger, phalanx in iter_phalanges(config):
        for imp, t in enumerate(generate_phalanx(config, subject, hand, finger, phalanx), start=1):
            tid = TemplateKey(subject, hand, finger, phalanx, imp).canonical_id()
            templates[tid] = t
            entries.append(
                ManifestEntry(
                    tid, subject, hand, finger, phalanx, imp, session_for(imp), t.nfiq,
                    f"templates/{tid}{FILE_SUFFIX}",
                )
            )
    return templates, entries


def generate_dataset(config: SynthConfig, out_dir: str | Path) -> DatasetManifest:
    """Write ``templates/*.fmr`` and ``manifest.json`` under ``out_dir``."""
    out_dir = Path(out_dir)
    (out_dir / "templates").mkdir(parents=True, exist_ok=True)
    templates, entries = generate_templates(config)
    for e in entries:
        write_template(out_dir / e.file_path, templates[e.template_id])
    manifest = DatasetManifest(entries, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    (out_dir / "synth_config.json").write_text(json.dumps(config.to_dict(), indent=1) + "\n")
    return manifest
