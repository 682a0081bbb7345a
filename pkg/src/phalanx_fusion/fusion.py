"""Score-level fusion across phalanges and fingers.

A fused trial combines one score per channel of a scenario into the
weighted mean ``F = sum(w * S) / sum(w)``.  Three weighting rules exist:

* ``quality_based``: ``w = q_probe + q_gallery`` with ``q = 6 - NFIQ``;
* ``simple_sum``: ``w = 1``;
* ``static_weight``: ``w = c[phalanx]`` with fixed per-phalanx constants.

Trials line up across channels by identical (probe impression, gallery
impression) indices.  A scenario either *pools* its fingers (each finger is
its own identity, the way single-channel evaluation treats it) or fuses
them *jointly* (the fingers of one hand form one identity and each trial
holds one score per finger and phalanx).
"""

from __future__ import annotations

import csv
import enum
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    IncompleteChannel,
    MissingStaticWeight,
    RangeError,
    SchemaError,
    ZeroWeightSum,
)
from .protocol import Finger, ScoreRecord, ScoreTable

FUSED_COLUMNS = ("trial_id", "genuine", "fused_score", "policy", "n_channels")

_FINGERS = tuple(Finger)
_FINGER_ORDER = {f: i for i, f in enumerate(_FINGERS)}


def invert_nfiq(nfiq: int) -> int:
    """Map NFIQ (1 best .. 5 worst) to a quality value (5 best .. 1 worst)."""
    if isinstance(nfiq, bool) or int(nfiq) != nfiq or not 1 <= nfiq <= 5:
        raise RangeError(f"NFIQ must be an integer in 1..5, got {nfiq!r}")
    return 6 - int(nfiq)


class PolicyKind(str, enum.Enum):
    QUALITY_BASED = "quality_based"
    SIMPLE_SUM = "simple_sum"
    STATIC_WEIGHT = "static_weight"


DEFAULT_STATIC_WEIGHTS: dict[frozenset, dict[int, float]] = {
    frozenset({2, 3}): {2: 0.7, 3: 0.3},
    frozenset({1, 2, 3}): {1: 0.5, 2: 0.4, 3: 0.1},
}


def validate_static_weights(weights: Mapping[int, float]) -> None:
    if not weights:
        raise ConfigError("static weights are empty")
    for p, c in weights.items():
        if int(p) not in (1, 2, 3):
            raise ConfigError(f"static weight for unknown phalanx {p!r}")
        if not 0.0 < c < 1.0:
            raise ConfigError(f"static weight c{p}={c} must lie strictly between 0 and 1")
    total = math.fsum(weights.values())
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"static weights sum to {total}, not 1")
    ordered = [weights[p] for p in sorted(weights)]
    if any(b >= a for a, b in zip(ordered, ordered[1:])):
        raise ConfigError("static weights must strictly decrease from distal to proximal")


@dataclass(frozen=True)
class WeightPolicy:
    kind: PolicyKind
    static_weights: Mapping[int, float] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.static_weights is not None:
            object.__setattr__(
                self, "static_weights", {int(p): float(c) for p, c in self.static_weights.items()}
            )
        if self.kind is PolicyKind.STATIC_WEIGHT:
            if self.static_weights is None:
                raise ConfigError("static_weight policy needs static_weights")
            validate_static_weights(self.static_weights)

    @classmethod
    def quality_based(cls) -> WeightPolicy:
        return cls(PolicyKind.QUALITY_BASED)

    @classmethod
    def simple_sum(cls) -> WeightPolicy:
        return cls(PolicyKind.SIMPLE_SUM)

    @classmethod
    def static(cls, weights: Mapping[int, float] | None = None, phalanges: Iterable[int] = ()) -> WeightPolicy:
        """Static policy; without explicit weights the defaults for ``phalanges`` apply."""
        if weights is None:
            key = frozenset(int(p) for p in phalanges)
            if key not in DEFAULT_STATIC_WEIGHTS:
                raise ConfigError(f"no default static weights for phalanges {sorted(key)}")
            weights = DEFAULT_STATIC_WEIGHTS[key]
        return cls(PolicyKind.STATIC_WEIGHT, weights)

    def static_weight(self, phalanx: int) -> float:
        assert self.static_weights is not None
        try:
            return self.static_weights[int(phalanx)]
        except KeyError:
            raise MissingStaticWeight(f"no static weight for phalanx {int(phalanx)}") from None

    def weights(self, phalanx: np.ndarray, nfiq_probe: np.ndarray, nfiq_gallery: np.ndarray) -> np.ndarray:
        """Vectorised ``weight_for`` over aligned arrays."""
        if self.kind is PolicyKind.SIMPLE_SUM:
            return np.ones(np.shape(phalanx), np.float64)
        if self.kind is PolicyKind.QUALITY_BASED:
            for arr in (nfiq_probe, nfiq_gallery):
                if np.any((arr < 1) | (arr > 5)):
                    raise RangeError("NFIQ values must lie in 1..5")
            return ((6 - nfiq_probe) + (6 - nfiq_gallery)).astype(np.float64)
        table = np.full(4, np.nan)
        for p in np.unique(phalanx):
            table[int(p)] = self.static_weight(int(p))
        return table[phalanx]

    def to_json(self) -> dict:
        d: dict = {"kind": self.kind.value}
        if self.static_weights is not None:
            d["static_weights"] = {str(p): c for p, c in sorted(self.static_weights.items())}
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> WeightPolicy:
        try:
            kind = PolicyKind(d["kind"])
        except (KeyError, ValueError):
            raise ConfigError(f"unknown fusion policy {d.get('kind')!r}") from None
        sw = d.get("static_weights")
        return cls(kind, {int(p): float(c) for p, c in sw.items()} if sw else None)


def weight_for(policy: WeightPolicy, record: ScoreRecord) -> float:
    if policy.kind is PolicyKind.SIMPLE_SUM:
        return 1.0
    if policy.kind is PolicyKind.QUALITY_BASED:
        return float(invert_nfiq(record.nfiq_probe) + invert_nfiq(record.nfiq_gallery))
    return policy.static_weight(record.phalanx)


# -- scenarios ---------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    name: str
    fingers: tuple[Finger, ...]
    phalanges: tuple[int, ...]
    policy: WeightPolicy = field(default_factory=WeightPolicy.simple_sum)
    joint: bool = False  # fingers of one hand fused into a single trial

    def __post_init__(self) -> None:
        fingers = tuple(sorted({Finger(f) for f in self.fingers}, key=_FINGER_ORDER.get))
        phalanges = tuple(sorted({int(p) for p in self.phalanges}))
        object.__setattr__(self, "fingers", fingers)
        object.__setattr__(self, "phalanges", phalanges)
        if not self.name:
            raise ConfigError("scenario needs a name")
        if not fingers or not phalanges:
            raise ConfigError(f"scenario {self.name!r} needs at least one finger and one phalanx")
        if any(p not in (1, 2, 3) for p in phalanges):
            raise ConfigError(f"scenario {self.name!r}: phalanges must be in 1..3")
        if self.policy.kind is PolicyKind.STATIC_WEIGHT:
            missing = [p for p in phalanges if p not in self.policy.static_weights]
            if missing:
                raise MissingStaticWeight(f"scenario {self.name!r}: no static weight for phalanges {missing}")

    @property
    def channels(self) -> list[tuple[Finger, int]]:
        """Slot order of the fused matrix."""
        if self.joint:
            return [(f, p) for f in self.fingers for p in self.phalanges]
        return [(None, p) for p in self.phalanges]  # type: ignore[list-item]

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "fingers": [f.value for f in self.fingers],
            "phalanges": list(self.phalanges),
            "policy": self.policy.to_json(),
            "joint": self.joint,
        }

    @classmethod
    def from_json(cls, d: Mapping) -> Scenario:
        try:
            return cls(
                d["name"],
                tuple(Finger(f) for f in d["fingers"]),
                tuple(d["phalanges"]),
                WeightPolicy.from_json(d.get("policy", {"kind": "simple_sum"})),
                bool(d.get("joint", False)),
            )
        except KeyError as exc:
            raise ConfigError(f"scenario is missing field {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"scenario {d.get('name')!r}: {exc}") from None


# -- trial matrix -------------------------------------------------------------------


@dataclass
class FusionMatrix:
    """Complete fused trials as rows, scenario channels as columns."""

    scenario: Scenario
    trial_keys: np.ndarray  # packed identities, ascending
    genuine: np.ndarray
    scores: np.ndarray  # (trials, channels)
    nfiq_probe: np.ndarray
    nfiq_gallery: np.ndarray
    phalanx: np.ndarray  # phalanx of each column
    record_index: np.ndarray  # row in the source score table
    n_dropped: int = 0

    def __len__(self) -> int:
        return int(self.trial_keys.shape[0])

    @property
    def n_channels(self) -> int:
        return int(self.scores.shape[1])

    def trial_ids(self) -> list[str]:
        return [trial_id(k, self.scenario) for k in self.trial_keys.tolist()]


_SIDE_BITS = 27


def _side_key(subject, hand, finger, impression):
    return ((subject * 2 + hand) * 8 + finger) * 8 + impression


def trial_id(key: int, scenario: Scenario) -> str:
    """Readable trial identity, e.g. ``s003-L-index-i1~s007-R-middle-i2``."""

    def side(v: int) -> str:
        imp = v & 7
        v >>= 3
        finger = _FINGERS[v & 7]
        v >>= 3
        hand = "R" if v & 1 else "L"
        subject = v >> 1
        label = "+".join(f.value for f in scenario.fingers) if scenario.joint else finger.value
        return f"s{subject:03d}-{hand}-{label}-i{imp}"

    return f"{side(key >> _SIDE_BITS)}~{side(key & ((1 << _SIDE_BITS) - 1))}"


def build_fusion_matrix(
    table: ScoreTable, scenario: Scenario, pairing_rule: str = "same_impression", *, strict: bool = False
) -> FusionMatrix:
    if pairing_rule != "same_impression":
        raise ConfigError(f"unknown pairing rule {pairing_rule!r}; only 'same_impression' is defined")
    cols = table.key_columns()
    finger_set = np.array([_FINGER_ORDER[f] for f in scenario.fingers], np.int64)
    pf, gf, ph = cols["p_finger"], cols["g_finger"], cols["p_phalanx"]
    if np.any(cols["g_phalanx"] != ph):
        raise DataError("score table holds cross-phalanx comparisons, which cannot be weighted")
    sel = np.isin(ph, scenario.phalanges) & np.isin(pf, finger_set) & np.isin(gf, finger_set)
    if scenario.joint:
        sel &= pf == gf
    rows = np.flatnonzero(sel)

    ps, pg = cols["p_subject"][rows], cols["g_subject"][rows]
    if rows.size and max(int(ps.max()), int(pg.max())) >= 1 << 20:
        raise DataError("subject ids above 2^20 are not supported by fusion keys")
    kf_p = np.zeros_like(rows) if scenario.joint else pf[rows]
    kf_g = np.zeros_like(rows) if scenario.joint else gf[rows]
    key = (
        _side_key(ps, cols["p_hand"][rows], kf_p, cols["p_impression"][rows]) << _SIDE_BITS
    ) | _side_key(pg, cols["g_hand"][rows], kf_g, cols["g_impression"][rows])

    channels = scenario.channels
    slot_of = np.full((len(_FINGERS), 4), -1, np.int64)
    for s, (f, p) in enumerate(channels):
        if scenario.joint:
            slot_of[_FINGER_ORDER[f], p] = s
        else:
            slot_of[:, p] = s
    slot = slot_of[pf[rows], ph[rows]]
    n_slots = len(channels)

    for s, (f, p) in enumerate(channels):
        if not np.any(slot == s):
            label = f"{f.value}, phalanx {p}" if f is not None else f"phalanx {p}"
            raise IncompleteChannel(f"scenario {scenario.name!r}: score table has no records for {label}")

    uniq, inv = np.unique(key, return_inverse=True)
    n_trials = uniq.size
    flat = inv * n_slots + slot
    counts = np.bincount(flat, minlength=n_trials * n_slots)
    if np.any(counts > 1):
        raise DataError(f"scenario {scenario.name!r}: a trial has two scores for the same channel")
    present = counts.reshape(n_trials, n_slots).astype(bool)
    complete = present.all(axis=1)
    n_dropped = int(n_trials - complete.sum())
    if n_dropped and strict:
        raise IncompleteChannel(
            f"scenario {scenario.name!r}: {n_dropped} trials lack a score in some channel"
        )

    index = np.full(n_trials * n_slots, -1, np.int64)
    index[flat] = rows
    index = index.reshape(n_trials, n_slots)[complete]
    genuine = table.genuine[index]
    if index.size and np.any(genuine != genuine[:, :1]):
        raise DataError("constituent records of a trial disagree on the genuine flag")
    return FusionMatrix(
        scenario=scenario,
        trial_keys=uniq[complete],
        genuine=genuine[:, 0] if index.size else np.zeros(0, bool),
        scores=table.scores[index],
        nfiq_probe=table.nfiq_probe[index],
        nfiq_gallery=table.nfiq_gallery[index],
        phalanx=np.array([p for _, p in channels], np.int64),
        record_index=index,
        n_dropped=n_dropped,
    )


def weighted_mean(scores: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Row-wise ``sum(w*S)/sum(w)`` accumulated column by column.

    Normalising the weights first makes every row with equal weights go
    through the exact same arithmetic, whatever the common weight is.
    """
    total = np.zeros(scores.shape[0])
    for j in range(weights.shape[1]):
        total = total + weights[:, j]
    if np.any(total <= 0):
        raise ZeroWeightSum("fusion weights sum to zero")
    acc = np.zeros(scores.shape[0])
    for j in range(scores.shape[1]):
        acc = acc + (weights[:, j] / total) * scores[:, j]
    return np.clip(acc, scores.min(axis=1), scores.max(axis=1))


def fuse_matrix(matrix: FusionMatrix, policy: WeightPolicy | None = None) -> np.ndarray:
    policy = policy or matrix.scenario.policy
    if len(matrix) == 0:
        return np.zeros(0)
    ph = np.broadcast_to(matrix.phalanx, matrix.scores.shape)
    w = policy.weights(ph, matrix.nfiq_probe, matrix.nfiq_gallery)
    return weighted_mean(matrix.scores, w)


# -- per-set interface ---------------------------------------------------------------


@dataclass(frozen=True)
class FusionMember:
    score: float
    phalanx: int
    finger: Finger
    nfiq_probe: int
    nfiq_gallery: int
    record_index: int = -1


@dataclass(frozen=True)
class FusionSet:
    trial_id: str
    members: tuple[FusionMember, ...]
    genuine: bool

    def __post_init__(self) -> None:
        if not self.members:
            raise DataError(f"fusion set {self.trial_id!r} is empty")


@dataclass(frozen=True)
class FusedScore:
    trial_id: str
    value: float
    genuine: bool


def build_fusion_sets(
    table: ScoreTable, scenario: Scenario, pairing_rule: str = "same_impression", *, strict: bool = False
) -> list[FusionSet]:
    m = build_fusion_matrix(table, scenario, pairing_rule, strict=strict)
    cols = table.key_columns()
    ids = m.trial_ids()
    out = []
    for t in range(len(m)):
        members = tuple(
            FusionMember(
                float(m.scores[t, j]),
                int(m.phalanx[j]),
                _FINGERS[int(cols["p_finger"][m.record_index[t, j]])],
                int(m.nfiq_probe[t, j]),
                int(m.nfiq_gallery[t, j]),
                int(m.record_index[t, j]),
            )
            for j in range(m.n_channels)
        )
        out.append(FusionSet(ids[t], members, bool(m.genuine[t])))
    return out


def fuse(fset: FusionSet, policy: WeightPolicy) -> FusedScore:
    scores = np.array([[mb.score for mb in fset.members]])
    ph = np.array([[mb.phalanx for mb in fset.members]], np.int64)
    nfp = np.array([[mb.nfiq_probe for mb in fset.members]], np.int64)
    nfg = np.array([[mb.nfiq_gallery for mb in fset.members]], np.int64)
    value = weighted_mean(scores, policy.weights(ph, nfp, nfg))[0]
    return FusedScore(fset.trial_id, float(value), fset.genuine)


# -- fused csv -----------------------------------------------------------------------


def write_fused_csv(path: str | Path, matrix: FusionMatrix, fused: np.ndarray, policy: WeightPolicy) -> None:
    ids = matrix.trial_ids()
    gen = matrix.genuine.tolist()
    vals = fused.tolist()
    n = matrix.n_channels
    kind = policy.kind.value
    with open(path, "w", newline="") as fh:
        fh.write(",".join(FUSED_COLUMNS) + "\n")
        fh.writelines(f"{ids[i]},{int(gen[i])},{vals[i]!r},{kind},{n}\n" for i in range(len(ids)))


@dataclass
class FusedTable:
    trial_ids: list[str]
    genuine: np.ndarray
    scores: np.ndarray
    policy: str
    n_channels: int


def read_fused_csv(path: str | Path) -> FusedTable:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != FUSED_COLUMNS:
            raise SchemaError(f"{path}: header must be {','.join(FUSED_COLUMNS)}")
        ids, gen, sc, policies, nch = [], [], [], set(), set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(FUSED_COLUMNS):
                raise SchemaError(f"{path.name}:{lineno}: expected {len(FUSED_COLUMNS)} fields")
            try:
                g, s, n = int(row[1]), float(row[2]), int(row[4])
            except ValueError:
                raise SchemaError(f"{path.name}:{lineno}: non-numeric field") from None
            if g not in (0, 1):
                raise RangeError(f"{path.name}:{lineno}: genuine flag must be 0 or 1")
            if not math.isfinite(s):
                raise RangeError(f"{path.name}:{lineno}: fused score is not finite")
            ids.append(row[0])
            gen.append(bool(g))
            sc.append(s)
            policies.add(row[3])
            nch.add(n)
    if len(policies) > 1 or len(nch) > 1:
        raise SchemaError(f"{path}: mixes several policies or channel counts")
    return FusedTable(
        ids, np.array(gen, bool), np.array(sc, np.float64),
        policies.pop() if policies else "", nch.pop() if nch else 0,
    )


# -- weight search --------------------------------------------------------------------


def static_weight_grid(phalanges: Sequence[int], step: float = 0.1) -> list[dict[int, float]]:
    """Every valid static weight set whose values are multiples of ``step``."""
    units = round(1.0 / step)
    if not math.isclose(units * step, 1.0):
        raise ConfigError("step must divide 1")
    phalanges = sorted(int(p) for p in phalanges)
    out = []
    for combo in itertools.product(range(1, units), repeat=len(phalanges)):
        if sum(combo) != units or any(b >= a for a, b in zip(combo, combo[1:])):
            continue
        out.append({p: c / units for p, c in zip(phalanges, combo)})
    return out


def grid_search_static_weights(
    matrix: FusionMatrix, step: float = 0.1, objective=None
) -> list[tuple[dict[int, float], float]]:
    """Score every grid weight set; lowest objective (default EER) first."""
    from .evaluation import eer, roc_curve

    if objective is None:
        def objective(fused, genuine):
            return eer(roc_curve(fused[genuine], fused[~genuine]))

    results = []
    for weights in static_weight_grid(matrix.scenario.phalanges, step):
        fused = fuse_matrix(matrix, WeightPolicy(PolicyKind.STATIC_WEIGHT, weights))
        results.append((weights, float(objective(fused, matrix.genuine))))
    results.sort(key=lambda r: (r[1], [-r[0][p] for p in sorted(r[0])]))
    return results


def channel_scores(table: ScoreTable, fingers: Sequence[Finger], phalanges: Sequence[int]) -> FusionMatrix:
    """Trials of a pooled scenario, for inspecting paired per-channel scores."""
    return build_fusion_matrix(
        table, Scenario("channels", tuple(fingers), tuple(phalanges), WeightPolicy.simple_sum())
    )

