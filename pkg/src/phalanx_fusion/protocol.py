"""Dataset manifests, comparison enumeration and score tables.

Every finger of every person is its own *virtual subject*.  Comparisons are
all ordered template pairs of the same phalanx type except a template with
itself: genuine when both sides come from the same virtual subject,
imposter otherwise.  By default imposter comparisons also cross finger
types (an index finger probe against a middle finger gallery), which is
what yields 1600 * 1596 imposter pairs for 400 fingers with 4 impressions.
``cross_finger=False`` restricts matching to identical (finger, phalanx)
channels instead.

Pair lists and score tables are columnar: millions of comparisons are held
as numpy arrays and materialised as :class:`MatchPair` / :class:`ScoreRecord`
objects only on iteration.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .codec import MinutiaTemplate, read_template
from .errors import DuplicateEntry, MissingTemplate, ParseError, RangeError, SchemaError
from .matcher import MatcherParams, PackedTemplates, score_pairs


class Hand(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"


class Finger(str, enum.Enum):
    THUMB = "thumb"
    INDEX = "index"
    MIDDLE = "middle"
    RING = "ring"
    LITTLE = "little"


class Phalanx(enum.IntEnum):
    DISTAL = 1
    MIDDLE = 2
    PROXIMAL = 3


NON_THUMB_FINGERS = (Finger.INDEX, Finger.MIDDLE, Finger.RING, Finger.LITTLE)
# anatomically a thumb has no middle phalanx
THUMB_PHALANGES = (Phalanx.DISTAL, Phalanx.PROXIMAL)

MANIFEST_FIELDS = (
    "template_id",
    "subject_id",
    "hand",
    "finger",
    "phalanx",
    "impression",
    "session",
    "nfiq",
    "file_path",
)

SCORE_COLUMNS = (
    "probe_id",
    "gallery_id",
    "finger",
    "phalanx",
    "genuine",
    "score",
    "nfiq_probe",
    "nfiq_gallery",
)

_FINGER_ORDER = {f: i for i, f in enumerate(Finger)}
_ISO_POSITION = {Finger.THUMB: 1, Finger.INDEX: 2, Finger.MIDDLE: 3, Finger.RING: 4, Finger.LITTLE: 5}


def session_for(impression: int) -> int:
    """Impressions 1-2 were taken in the first session, 3-4 in the second."""
    return 1 if impression <= 2 else 2


def finger_position(hand: Hand, finger: Finger) -> int:
    """ISO finger position code (right thumb 1 .. right little 5, left 6..10)."""
    return _ISO_POSITION[finger] + (5 if hand is Hand.LEFT else 0)


# -- template identity ------------------------------------------------------------

_ID_RE = re.compile(
    r"^s(?P<subject>\d+)-(?P<hand>[LR])-(?P<finger>[a-z]+)-p(?P<phalanx>[1-3])-i(?P<impression>[1-4])$"
)


@dataclass(frozen=True, order=True)
class TemplateKey:
    """Who and what a template is, independent of where it is stored."""

    subject_id: int
    hand: Hand
    finger: Finger
    phalanx: Phalanx
    impression: int

    @property
    def virtual_subject(self) -> tuple[int, Hand, Finger]:
        return (self.subject_id, self.hand, self.finger)

    @property
    def channel(self) -> tuple[Finger, Phalanx]:
        return (self.finger, self.phalanx)

    def canonical_id(self) -> str:
        return (
            f"s{self.subject_id:03d}-{'L' if self.hand is Hand.LEFT else 'R'}-"
            f"{self.finger.value}-p{int(self.phalanx)}-i{self.impression}"
        )

    @classmethod
    def from_id(cls, template_id: str) -> TemplateKey:
        m = _ID_RE.match(template_id)
        if not m:
            raise ParseError(
                f"template id {template_id!r} is not of the form s<subject>-<L|R>-<finger>-p<n>-i<n>"
            )
        try:
            finger = Finger(m["finger"])
        except ValueError:
            raise ParseError(f"unknown finger in template id {template_id!r}") from None
        return cls(
            int(m["subject"]),
            Hand.LEFT if m["hand"] == "L" else Hand.RIGHT,
            finger,
            Phalanx(int(m["phalanx"])),
            int(m["impression"]),
        )


# -- manifest ---------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    template_id: str
    subject_id: int
    hand: Hand
    finger: Finger
    phalanx: Phalanx
    impression: int
    session: int
    nfiq: int
    file_path: str

    @property
    def key(self) -> TemplateKey:
        return TemplateKey(self.subject_id, self.hand, self.finger, self.phalanx, self.impression)

    @property
    def virtual_subject(self) -> tuple[int, Hand, Finger]:
        return (self.subject_id, self.hand, self.finger)

    @property
    def channel(self) -> tuple[Finger, Phalanx]:
        return (self.finger, self.phalanx)

    def to_json(self) -> dict:
        return {
            "template_id": self.template_id,
            "subject_id": self.subject_id,
            "hand": self.hand.value,
            "finger": self.finger.value,
            "phalanx": int(self.phalanx),
            "impression": self.impression,
            "session": self.session,
            "nfiq": self.nfiq,
            "file_path": self.file_path,
        }

    @classmethod
    def from_json(cls, obj: object, index: int = 0) -> ManifestEntry:
        where = f"manifest entry {index}"
        if not isinstance(obj, dict):
            raise ParseError(f"{where} is not an object")
        keys = set(obj)
        if keys != set(MANIFEST_FIELDS):
            missing = sorted(set(MANIFEST_FIELDS) - keys)
            extra = sorted(keys - set(MANIFEST_FIELDS))
            raise ParseError(f"{where}: missing fields {missing}, unexpected fields {extra}")
        for name in ("template_id", "hand", "finger", "file_path"):
            if not isinstance(obj[name], str):
                raise ParseError(f"{where}: {name} must be a string")
        for name in ("subject_id", "phalanx", "impression", "session", "nfiq"):
            if not isinstance(obj[name], int) or isinstance(obj[name], bool):
                raise ParseError(f"{where}: {name} must be an integer")
        try:
            hand = Hand(obj["hand"])
        except ValueError:
            raise RangeError(f"{where}: hand {obj['hand']!r} is not left/right") from None
        try:
            finger = Finger(obj["finger"])
        except ValueError:
            raise RangeError(f"{where}: unknown finger {obj['finger']!r}") from None
        if obj["subject_id"] < 0:
            raise RangeError(f"{where}: subject_id must be non-negative")
        if obj["phalanx"] not in (1, 2, 3):
            raise RangeError(f"{where}: phalanx {obj['phalanx']} outside 1..3")
        phalanx = Phalanx(obj["phalanx"])
        if finger is Finger.THUMB and phalanx not in THUMB_PHALANGES:
            raise RangeError(f"{where}: a thumb has no middle phalanx")
        if not 1 <= obj["impression"] <= 4:
            raise RangeError(f"{where}: impression {obj['impression']} outside 1..4")
        if obj["session"] != session_for(obj["impression"]):
            raise RangeError(
                f"{where}: impression {obj['impression']} belongs to session "
                f"{session_for(obj['impression'])}, not {obj['session']}"
            )
        if not 1 <= obj["nfiq"] <= 5:
            raise RangeError(f"{where}: nfiq {obj['nfiq']} outside 1..5")
        if not obj["template_id"]:
            raise RangeError(f"{where}: empty template_id")
        return cls(
            obj["template_id"], obj["subject_id"], hand, finger, phalanx,
            obj["impression"], obj["session"], obj["nfiq"], obj["file_path"],
        )


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path | None = None  # directory that relative file paths resolve against

    def __post_init__(self) -> None:
        self.validate()

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def validate(self) -> None:
        seen_keys: dict[TemplateKey, str] = {}
        seen_ids: set[str] = set()
        for e in self.entries:
            if e.template_id in seen_ids:
                raise DuplicateEntry(f"template_id {e.template_id!r} appears twice")
            seen_ids.add(e.template_id)
            k = e.key
            if k in seen_keys:
                raise DuplicateEntry(
                    f"{e.template_id!r} and {seen_keys[k]!r} share subject, hand, finger, "
                    "phalanx and impression"
                )
            seen_keys[k] = e.template_id

    def by_id(self) -> dict[str, ManifestEntry]:
        return {e.template_id: e for e in self.entries}

    def path_of(self, entry: ManifestEntry) -> Path:
        p = Path(entry.file_path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def to_json(self) -> list[dict]:
        return [e.to_json() for e in self.entries]

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, list):
        raise ParseError(f"{path}: manifest must be a JSON array of entries")
    entries = [ManifestEntry.from_json(obj, i) for i, obj in enumerate(raw)]
    return DatasetManifest(entries, root=path.parent)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest.to_json(), indent=1) + "\n")


def load_templates(
    manifest: DatasetManifest, ids: Iterable[str] | None = None
) -> dict[str, MinutiaTemplate]:
    """Read the ``.fmr`` files named by the manifest and attach NFIQ labels."""
    by_id = manifest.by_id()
    wanted = by_id.keys() if ids is None else ids
    out = {}
    for tid in wanted:
        e = by_id[tid]
        out[tid] = read_template(manifest.path_of(e), nfiq=e.nfiq)
    return out


# -- pairs ------------------------------------------------------------------------


@dataclass(frozen=True)
class MatchPair:
    probe_template_id: str
    gallery_template_id: str
    genuine: bool
    channel: tuple[Finger, Phalanx]
    gallery_finger: Finger | None = None  # set only for cross-finger imposters

    @property
    def finger_label(self) -> str:
        f = self.channel[0].value
        return f if self.gallery_finger is None else f"{f}:{self.gallery_finger.value}"


@dataclass
class PairList:
    """Ordered comparisons as index arrays into ``template_ids``.

    ``keys[i]`` is the identity of ``template_ids[i]``; ids are sorted, so
    ordering by index equals ordering by id.
    """

    template_ids: list[str]
    keys: list[TemplateKey]
    probe: np.ndarray
    gallery: np.ndarray
    genuine: np.ndarray

    def __len__(self) -> int:
        return int(self.probe.shape[0])

    @property
    def n_genuine(self) -> int:
        return int(np.count_nonzero(self.genuine))

    @property
    def n_imposter(self) -> int:
        return len(self) - self.n_genuine

    def __getitem__(self, i: int) -> MatchPair:
        p = self.keys[self.probe[i]]
        g = self.keys[self.gallery[i]]
        return MatchPair(
            self.template_ids[self.probe[i]],
            self.template_ids[self.gallery[i]],
            bool(self.genuine[i]),
            p.channel,
            None if g.finger is p.finger else g.finger,
        )

    def __iter__(self) -> Iterator[MatchPair]:
        for i in range(len(self)):
            yield self[i]

    def template_keys(self) -> dict[str, TemplateKey]:
        return dict(zip(self.template_ids, self.keys))


def _key_arrays(keys: Sequence[TemplateKey]) -> dict[str, np.ndarray]:
    return {
        "subject": np.array([k.subject_id for k in keys], np.int64),
        "hand": np.array([k.hand is Hand.RIGHT for k in keys], np.int64),
        "finger": np.array([_FINGER_ORDER[k.finger] for k in keys], np.int64),
        "phalanx": np.array([int(k.phalanx) for k in keys], np.int64),
        "impression": np.array([k.impression for k in keys], np.int64),
    }


def generate_pairs(
    manifest: DatasetManifest,
    channel_filter: Iterable[tuple[Finger | str, Phalanx | int]] | None = None,
    *,
    cross_finger: bool = True,
    include_thumbs: bool = False,
    dedup_symmetric: bool = False,
) -> PairList:
    """Enumerate every comparison of the protocol.

    Pairs are sorted by probe id, then gallery id.  ``channel_filter`` keeps
    only templates whose (finger, phalanx) is listed.  ``dedup_symmetric``
    keeps one direction of each unordered pair (probe id < gallery id),
    halving both counts.
    """
    allowed = None
    if channel_filter is not None:
        allowed = {(Finger(f), Phalanx(p)) for f, p in channel_filter}
    chosen = [
        e for e in manifest.entries
        if (include_thumbs or e.finger is not Finger.THUMB)
        and (allowed is None or e.channel in allowed)
    ]
    chosen.sort(key=lambda e: e.template_id)
    ids = [e.template_id for e in chosen]
    keys = [e.key for e in chosen]
    empty = np.zeros(0, np.int64)
    if not chosen:
        return PairList(ids, keys, empty, empty.copy(), np.zeros(0, bool))

    cols = _key_arrays(keys)
    vs = (cols["subject"] * 2 + cols["hand"]) * 8 + cols["finger"]
    group = cols["phalanx"] if cross_finger else cols["phalanx"] * 8 + cols["finger"]

    probes, galleries = [], []
    for g in np.unique(group):
        members = np.flatnonzero(group == g)
        n = members.size
        if n < 2:
            continue
        p = np.repeat(members, n)
        q = np.tile(members, n)
        keep = p != q
        if dedup_symmetric:
            keep &= p < q
        probes.append(p[keep])
        galleries.append(q[keep])
    if not probes:
        return PairList(ids, keys, empty, empty.copy(), np.zeros(0, bool))
    probe = np.concatenate(probes)
    gallery = np.concatenate(galleries)
    # each group is already (probe, gallery)-sorted and groups share no
    # probes, so a stable sort on probe gives the global order
    order = np.argsort(probe, kind="stable")
    probe = probe[order]
    gallery = gallery[order]
    genuine = vs[probe] == vs[gallery]
    return PairList(ids, keys, probe, gallery, genuine)


def expected_pair_counts(impressions_per_subject: Sequence[int]) -> tuple[int, int]:
    """Closed-form (genuine, imposter) ordered pair counts for one matching
    group whose virtual subjects have the given impression counts."""
    n = sum(impressions_per_subject)
    genuine = sum(k * (k - 1) for k in impressions_per_subject)
    imposter = sum(k * (n - k) for k in impressions_per_subject)
    return genuine, imposter


# -- score tables -------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreRecord:
    pair: MatchPair
    score: float
    nfiq_probe: int
    nfiq_gallery: int

    @property
    def phalanx(self) -> Phalanx:
        return self.pair.channel[1]


def round_score(scores: np.ndarray) -> np.ndarray:
    """Round to 4 decimals such that the result equals ``float('%.4f' % x)``.

    ``k / 1e4`` is the correctly rounded quotient, i.e. the same double a
    decimal parser produces for the printed value.
    """
    return np.rint(np.asarray(scores, np.float64) * 1e4) / 1e4


@dataclass
class ScoreTable:
    pairs: PairList
    scores: np.ndarray
    nfiq_probe: np.ndarray
    nfiq_gallery: np.ndarray
    provenance: dict = field(default_factory=dict)
    _key_cache: dict | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        n = len(self.pairs)
        for name in ("scores", "nfiq_probe", "nfiq_gallery"):
            if getattr(self, name).shape != (n,):
                raise SchemaError(f"{name} has {getattr(self, name).shape[0]} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, i: int) -> ScoreRecord:
        return ScoreRecord(
            self.pairs[i], float(self.scores[i]), int(self.nfiq_probe[i]), int(self.nfiq_gallery[i])
        )

    def __iter__(self) -> Iterator[ScoreRecord]:
        for i in range(len(self)):
            yield self[i]

    @property
    def genuine(self) -> np.ndarray:
        return self.pairs.genuine

    def key_columns(self) -> dict[str, np.ndarray]:
        """Per-record identity columns, prefixed ``p_`` (probe) and ``g_`` (gallery)."""
        if self._key_cache is not None:
            return self._key_cache
        per_template = _key_arrays(self.pairs.keys)
        out = {}
        for name, col in per_template.items():
            out["p_" + name] = col[self.pairs.probe] if col.size else np.zeros(0, np.int64)
            out["g_" + name] = col[self.pairs.gallery] if col.size else np.zeros(0, np.int64)
        self._key_cache = out
        return out

    def select(self, mask: np.ndarray) -> ScoreTable:
        p = self.pairs
        sub = PairList(p.template_ids, p.keys, p.probe[mask], p.gallery[mask], p.genuine[mask])
        return ScoreTable(
            sub, self.scores[mask], self.nfiq_probe[mask], self.nfiq_gallery[mask],
            dict(self.provenance),
        )

    def phalanx_mask(self, phalanx: int) -> np.ndarray:
        return self.key_columns()["p_phalanx"] == int(phalanx)

    def channel_mask(self, finger: Finger | str, phalanx: int) -> np.ndarray:
        """Records whose probe and gallery both come from this channel."""
        cols = self.key_columns()
        f = _FINGER_ORDER[Finger(finger)]
        return (
            (cols["p_phalanx"] == int(phalanx)) & (cols["p_finger"] == f) & (cols["g_finger"] == f)
        )

    # -- csv ----------------------------------------------------------------------

    def write_csv(self, path: str | Path, chunk: int = 200_000) -> None:
        ids = self.pairs.template_ids
        keys = self.pairs.keys
        finger = [k.finger.value for k in keys]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(SCORE_COLUMNS) + "\n")
            probe = self.pairs.probe.tolist()
            gallery = self.pairs.gallery.tolist()
            genuine = self.pairs.genuine.tolist()
            scores = self.scores.tolist()
            nfp = self.nfiq_probe.tolist()
            nfg = self.nfiq_gallery.tolist()
            for lo in range(0, len(probe), chunk):
                rows = []
                for k in range(lo, min(lo + chunk, len(probe))):
                    p, g = probe[k], gallery[k]
                    fl = finger[p] if finger[p] == finger[g] else f"{finger[p]}:{finger[g]}"
                    rows.append(
                        f"{ids[p]},{ids[g]},{fl},{int(keys[p].phalanx)},{int(genuine[k])},"
                        f"{scores[k]:.4f},{nfp[k]},{nfg[k]}\n"
                    )
                fh.write("".join(rows))


def execute_matching(
    pairs: PairList,
    templates: Mapping[str, MinutiaTemplate],
    params: MatcherParams = MatcherParams(),
    *,
    workers: int | None = 1,
    manifest_digest: str = "",
) -> ScoreTable:
    """Score every pair; record order equals pair order for any ``workers``."""
    used = np.union1d(pairs.probe, pairs.gallery) if len(pairs) else np.zeros(0, np.int64)
    missing = [pairs.template_ids[i] for i in used if pairs.template_ids[i] not in templates]
    if missing:
        raise MissingTemplate(f"{len(missing)} templates not found, e.g. {missing[0]!r}")
    local = {int(i): k for k, i in enumerate(used)}
    tlist = [templates[pairs.template_ids[i]] for i in used]
    nfiq = np.array(
        [t.nfiq if t.nfiq is not None else 0 for t in tlist] or [0], np.int64
    )
    if any(t.nfiq is None for t in tlist):
        raise MissingTemplate("templates must carry NFIQ labels (load them through a manifest)")
    remap = np.zeros(len(pairs.template_ids), np.int64)
    for i, k in local.items():
        remap[i] = k
    lp = remap[pairs.probe]
    lg = remap[pairs.gallery]
    packed = PackedTemplates.from_templates(tlist)
    scores = round_score(score_pairs(packed, lp, lg, params, workers=workers))
    return ScoreTable(
        pairs,
        scores,
        nfiq[lp] if len(pairs) else np.zeros(0, np.int64),
        nfiq[lg] if len(pairs) else np.zeros(0, np.int64),
        {"matcher": params.digest(), "manifest": manifest_digest},
    )


def _parse_finger_label(label: str, where: str) -> tuple[Finger, Finger]:
    parts = label.split(":")
    if len(parts) not in (1, 2):
        raise SchemaError(f"{where}: finger column {label!r} is malformed")
    try:
        fingers = [Finger(p) for p in parts]
    except ValueError:
        raise RangeError(f"{where}: unknown finger in {label!r}") from None
    return fingers[0], fingers[-1]


def read_score_csv(
    path: str | Path, manifest: DatasetManifest | None = None
) -> ScoreTable:
    """Load and validate a score table CSV.

    Template identities come from the manifest when given, otherwise from
    canonical template ids.
    """
    path = Path(path)
    text = path.read_text()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError(f"{path}: empty file, expected header {','.join(SCORE_COLUMNS)}") from None
    if tuple(header) != SCORE_COLUMNS:
        raise SchemaError(f"{path}: header {header} does not match {list(SCORE_COLUMNS)}")

    known = {e.template_id: e.key for e in manifest.entries} if manifest is not None else {}
    key_of: dict[str, TemplateKey] = {}

    def identity(tid: str, where: str) -> TemplateKey:
        k = key_of.get(tid)
        if k is None:
            if tid in known:
                k = known[tid]
            else:
                try:
                    k = TemplateKey.from_id(tid)
                except ParseError as exc:
                    raise SchemaError(f"{where}: {exc}") from None
            key_of[tid] = k
        return k

    rows_p, rows_g, gen, sc, nfp, nfg = [], [], [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        where = f"{path.name}:{lineno}"
        if not row:
            continue
        if len(row) != len(SCORE_COLUMNS):
            raise SchemaError(f"{where}: expected {len(SCORE_COLUMNS)} fields, got {len(row)}")
        pid, gid, flabel, ph, genuine, score, n1, n2 = row
        try:
            ph_i, gen_i, n1_i, n2_i = int(ph), int(genuine), int(n1), int(n2)
            s = float(score)
        except ValueError:
            raise SchemaError(f"{where}: non-numeric field") from None
        if ph_i not in (1, 2, 3):
            raise RangeError(f"{where}: phalanx {ph_i} outside 1..3")
        if gen_i not in (0, 1):
            raise RangeError(f"{where}: genuine flag must be 0 or 1")
        if not (1 <= n1_i <= 5 and 1 <= n2_i <= 5):
            raise RangeError(f"{where}: nfiq values must be in 1..5")
        if not math.isfinite(s) or s < 0:
            raise RangeError(f"{where}: score {score!r} is not a finite non-negative number")
        if pid == gid:
            raise RangeError(f"{where}: a template may not be matched with itself")
        kp = identity(pid, where)
        kg = identity(gid, where)
        fp, fg = _parse_finger_label(flabel, where)
        if (kp.finger, kg.finger) != (fp, fg) or int(kp.phalanx) != ph_i or int(kg.phalanx) != ph_i:
            raise SchemaError(f"{where}: finger/phalanx columns disagree with the template ids")
        if bool(gen_i) != (kp.virtual_subject == kg.virtual_subject):
            raise SchemaError(f"{where}: genuine flag disagrees with the template identities")
        rows_p.append(pid)
        rows_g.append(gid)
        gen.append(bool(gen_i))
        sc.append(s)
        nfp.append(n1_i)
        nfg.append(n2_i)

    ids = sorted(key_of)
    index = {t: i for i, t in enumerate(ids)}
    pairs = PairList(
        ids,
        [key_of[t] for t in ids],
        np.array([index[t] for t in rows_p], np.int64),
        np.array([index[t] for t in rows_g], np.int64),
        np.array(gen, bool),
    )
    return ScoreTable(
        pairs,
        np.array(sc, np.float64),
        np.array(nfp, np.int64),
        np.array(nfg, np.int64),
        {"source": str(path)},
    )


def concat_tables(tables: Sequence[ScoreTable]) -> ScoreTable:
    """Merge tables into one sharing a single sorted template index."""
    ids = sorted({t for tab in tables for t in tab.pairs.template_ids})
    index = {t: i for i, t in enumerate(ids)}
    key_of = {}
    for tab in tables:
        key_of.update(tab.pairs.template_keys())
    probes, galleries, gens, scores, n1, n2 = [], [], [], [], [], []
    for tab in tables:
        remap = np.array([index[t] for t in tab.pairs.template_ids] or [0], np.int64)
        probes.append(remap[tab.pairs.probe])
        galleries.append(remap[tab.pairs.gallery])
        gens.append(tab.pairs.genuine)
        scores.append(tab.scores)
        n1.append(tab.nfiq_probe)
        n2.append(tab.nfiq_gallery)

    def cat(parts, dtype):
        return np.concatenate(parts) if parts else np.zeros(0, dtype)

    pairs = PairList(
        ids, [key_of[t] for t in ids], cat(probes, np.int64), cat(galleries, np.int64), cat(gens, bool)
    )
    prov = tables[0].provenance if tables else {}
    return ScoreTable(pairs, cat(scores, np.float64), cat(n1, np.int64), cat(n2, np.int64), dict(prov))
