"""End-to-end runs: generate (or load) a dataset, match, fuse, evaluate, report.

Run directory layout::

    dataset/              synthetic templates + manifest (synthetic runs only)
    scores/phalanx{p}.csv one score table per phalanx type
    fused/{scenario}.csv  fused trial scores
    roc/{scenario}.csv    ROC points, descending threshold
    report.json           operating points, EERs, correlations, summaries
    run.lock.json         config hash, seed and library versions

Nothing in the report depends on wall-clock time, paths or worker count,
so reruns and parallel runs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .errors import ConfigError, PhalanxFusionError, Unattainable
from .evaluation import (
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
from .fusion import (
    Scenario,
    WeightPolicy,
    build_fusion_matrix,
    channel_scores,
    fuse_matrix,
    write_fused_csv,
)
from .matcher import MatcherParams
from .protocol import (
    NON_THUMB_FINGERS,
    DatasetManifest,
    Finger,
    ScoreTable,
    concat_tables,
    execute_matching,
    generate_pairs,
    load_manifest,
    load_templates,
    read_score_csv,
)
from .synth import SynthConfig, generate_dataset

log = logging.getLogger(__name__)

DEFAULT_FAR_TARGETS = (1e-3, 1e-4, 1e-5, 1e-6)

_ALL = NON_THUMB_FINGERS
_POLICIES = ("simple_sum", "quality_based", "static_weight")


def _policy(kind: str, phalanges: Sequence[int]) -> WeightPolicy:
    if kind == "static_weight":
        return WeightPolicy.static(phalanges=phalanges)
    return WeightPolicy(kind)


def _joint(fingers: Sequence[Finger]) -> Scenario:
    name = "+".join(f.value for f in fingers) + "_p23_static_weight"
    return Scenario(name, tuple(fingers), (2, 3), WeightPolicy.static(phalanges=(2, 3)), joint=True)


def expand_preset(name: str) -> list[Scenario]:
    """Scenario list of a named preset."""
    if name == "scenario1_single_phalanx":
        return [Scenario(f"phalanx{p}", _ALL, (p,)) for p in (1, 2, 3)]
    if name == "scenario2_multiphalanx":
        return [
            Scenario(f"p{''.join(map(str, ph))}_{kind}", _ALL, ph, _policy(kind, ph))
            for ph in ((2, 3), (1, 2, 3))
            for kind in _POLICIES
        ]
    idx, mid, ring, little = NON_THUMB_FINGERS
    if name == "scenario3a_two_finger":
        return [_joint(fs) for fs in ((idx, mid), (mid, ring), (ring, little))]
    if name == "scenario3b_multi_finger":
        return [_joint(fs) for fs in ((idx, mid), (idx, mid, ring), (idx, mid, ring, little))]
    raise ConfigError(
        f"unknown preset {name!r}; choose from {', '.join(PRESETS)}"
    )


PRESETS = (
    "scenario1_single_phalanx",
    "scenario2_multiphalanx",
    "scenario3a_two_finger",
    "scenario3b_multi_finger",
)


@dataclass
class RunConfig:
    scenarios: list[Scenario]
    manifest: Path | None = None
    synth: SynthConfig | None = None
    matcher: MatcherParams = field(default_factory=MatcherParams)
    far_targets: tuple[float, ...] = DEFAULT_FAR_TARGETS
    out_dir: Path = Path("run")
    seed: int | None = None
    strict: bool = False
    dedup_symmetric: bool = False
    cross_finger: bool = True
    include_thumbs: bool = False
    workers: int | None = 1  # execution detail only; never affects outputs

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if (self.manifest is None) == (self.synth is None):
            raise ConfigError("give exactly one of a manifest path or a synthetic config")
        if not self.scenarios:
            raise ConfigError("no scenarios to run")
        names = [s.name for s in self.scenarios]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigError(f"duplicate scenario names: {dupes}")
        if not self.far_targets or any(not 0.0 < t <= 1.0 for t in self.far_targets):
            raise ConfigError("FAR targets must lie in (0, 1]")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be positive")

    @property
    def effective_synth(self) -> SynthConfig | None:
        if self.synth is None or self.seed is None:
            return self.synth
        return SynthConfig.from_dict({**self.synth.to_dict(), "seed": self.seed})

    def to_dict(self) -> dict:
        """Everything that determines the outputs (paths and workers excluded)."""
        synth = self.effective_synth
        return {
            "manifest": None if self.manifest is None else self.manifest.name,
            "synth": None if synth is None else synth.to_dict(),
            "matcher": self.matcher.to_dict(),
            "scenarios": [s.to_json() for s in self.scenarios],
            "far_targets": list(self.far_targets),
            "strict": self.strict,
            "dedup_symmetric": self.dedup_symmetric,
            "cross_finger": self.cross_finger,
            "include_thumbs": self.include_thumbs,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: Path | None = None) -> RunConfig:
        known = {
            "manifest", "synth", "matcher", "presets", "scenarios", "far_targets", "out",
            "seed", "strict", "dedup_symmetric", "cross_finger", "include_thumbs", "workers",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run config fields: {sorted(unknown)}")
        scenarios: list[Scenario] = []
        for preset in d.get("presets", []):
            scenarios.extend(expand_preset(preset))
        scenarios.extend(Scenario.from_json(s) for s in d.get("scenarios", []))
        scenarios = _dedupe(scenarios)
        manifest = d.get("manifest")
        if manifest is not None:
            manifest = Path(manifest)
            if base_dir is not None and not manifest.is_absolute():
                manifest = base_dir / manifest
        synth = d.get("synth")
        if synth is not None:
            synth = SynthConfig.from_dict(synth)
        try:
            return cls(
                scenarios=scenarios,
                manifest=manifest,
                synth=synth,
                matcher=MatcherParams.from_dict(d.get("matcher")),
                far_targets=tuple(float(t) for t in d.get("far_targets", DEFAULT_FAR_TARGETS)),
                out_dir=Path(d.get("out", "run")),
                seed=d.get("seed"),
                strict=bool(d.get("strict", False)),
                dedup_symmetric=bool(d.get("dedup_symmetric", False)),
                cross_finger=bool(d.get("cross_finger", True)),
                include_thumbs=bool(d.get("include_thumbs", False)),
                workers=d.get("workers", 1),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, PhalanxFusionError):
                raise
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: run config must be a JSON object")
        return cls.from_dict(raw, base_dir=path.parent)


def _dedupe(scenarios: list[Scenario]) -> list[Scenario]:
    """Drop exact repeats (presets share some scenarios); keep conflicting names."""
    seen: dict[str, Scenario] = {}
    out = []
    for s in scenarios:
        if s.name in seen and seen[s.name] == s:
            continue
        seen.setdefault(s.name, s)
        out.append(s)
    return out


# -- stages -------------------------------------------------------------------------


def match_phalanx(
    manifest: DatasetManifest,
    templates,
    phalanx: int,
    params: MatcherParams,
    *,
    workers: int | None = 1,
    cross_finger: bool = True,
    include_thumbs: bool = False,
    dedup_symmetric: bool = False,
) -> ScoreTable:
    fingers = list(Finger) if include_thumbs else list(NON_THUMB_FINGERS)
    pairs = generate_pairs(
        manifest,
        [(f, phalanx) for f in fingers],
        cross_finger=cross_finger,
        include_thumbs=include_thumbs,
        dedup_symmetric=dedup_symmetric,
    )
    return execute_matching(pairs, templates, params, workers=workers, manifest_digest=manifest.digest())


def evaluate_scores(
    name: str,
    scores: np.ndarray,
    genuine: np.ndarray,
    far_targets: Sequence[float],
    *,
    strict: bool = False,
    roc_path: Path | None = None,
) -> dict:
    """Report block for one score set (single channel or fused)."""
    curve = roc_curve(scores[genuine], scores[~genuine])
    if roc_path is not None:
        write_roc_csv(curve, roc_path)
    points = []
    for target in far_targets:
        try:
            points.append(operating_point_json(gar_at_far(curve, target)))
        except Unattainable as exc:
            if strict:
                raise Unattainable(target, curve.n_imposter) from exc
            points.append(
                {
                    "far_target": target,
                    "attainable": False,
                    "n_genuine": curve.n_genuine,
                    "n_imposter": curve.n_imposter,
                }
            )
    e = eer(curve)
    return {
        "name": name,
        "n_genuine": curve.n_genuine,
        "n_imposter": curve.n_imposter,
        "eer": round(e, 6),
        "eer_percent": round(100 * e, 1),
        "eer_threshold": float(curve.thresholds[eer_index(curve)]),
        "operating_points": points,
    }


def phalanx_correlations(table: ScoreTable, phalanges: Sequence[int]) -> dict[str, float]:
    """Pearson r between genuine scores of two phalanges, paired by trial."""
    out = {}
    present = sorted(set(int(p) for p in phalanges))
    for i, a in enumerate(present):
        for b in present[i + 1:]:
            m = channel_scores(table, NON_THUMB_FINGERS, (a, b))
            g = m.genuine
            if g.sum() < 2:
                continue
            try:
                r = pearson_correlation(m.scores[g, 0], m.scores[g, 1])
            except PhalanxFusionError:
                continue
            out[f"R({a},{b})"] = round(r, 6)
    return out


def dataset_summary(manifest: DatasetManifest, templates) -> dict:
    """Minutiae-count and NFIQ distributions per phalanx."""
    out = {}
    for p in sorted({int(e.phalanx) for e in manifest}):
        entries = [e for e in manifest if int(e.phalanx) == p]
        minutiae = summarize_distribution(
            [len(templates[e.template_id].minutiae) for e in entries], integer_bins(0, 255)
        )
        nfiq = summarize_distribution([e.nfiq for e in entries], integer_bins(1, 5))
        out[f"phalanx{p}"] = {
            "templates": len(entries),
            "minutiae_mean": round(minutiae.mean, 6),
            "minutiae_std": round(minutiae.std, 6),
            # sparse histogram: minutiae count -> number of templates
            "minutiae_histogram": {str(i): c for i, c in enumerate(minutiae.counts) if c},
            "nfiq_histogram": {str(q): c for q, c in zip(range(1, 6), nfiq.counts)},
        }
    return out


def _versions() -> dict:
    import numba

    return {
        "phalanx_fusion": __version__,
        "numpy": np.__version__,
        "numba": numba.__version__,
        "python": platform.python_version(),
    }


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=False) + "\n")


def run_pipeline(config: RunConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    synth = config.effective_synth
    if synth is not None:
        log.info("generating synthetic dataset (%d subjects)", synth.n_subjects)
        manifest = generate_dataset(synth, out / "dataset")
    else:
        manifest = load_manifest(config.manifest)
    templates = load_templates(manifest)

    phalanges = sorted({p for s in config.scenarios for p in s.phalanges})
    (out / "scores").mkdir(exist_ok=True)
    tables = []
    pair_counts = {}
    for p in phalanges:
        log.info("matching phalanx %d", p)
        tab = match_phalanx(
            manifest, templates, p, config.matcher,
            workers=config.workers,
            cross_finger=config.cross_finger,
            include_thumbs=config.include_thumbs,
            dedup_symmetric=config.dedup_symmetric,
        )
        tab.write_csv(out / "scores" / f"phalanx{p}.csv")
        pair_counts[f"phalanx{p}"] = {"genuine": tab.pairs.n_genuine, "imposter": tab.pairs.n_imposter}
        tables.append(tab)
    table = concat_tables(tables)

    (out / "fused").mkdir(exist_ok=True)
    (out / "roc").mkdir(exist_ok=True)
    blocks = []
    for sc in config.scenarios:
        log.info("scenario %s", sc.name)
        try:
            matrix = build_fusion_matrix(table, sc, strict=config.strict)
            fused = fuse_matrix(matrix)
            write_fused_csv(out / "fused" / f"{sc.name}.csv", matrix, fused, sc.policy)
            block = evaluate_scores(
                sc.name, fused, matrix.genuine, config.far_targets,
                strict=config.strict, roc_path=out / "roc" / f"{sc.name}.csv",
            )
        except PhalanxFusionError as exc:
            exc.args = (f"scenario {sc.name!r}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        block["definition"] = sc.to_json()
        block["n_channels"] = matrix.n_channels
        block["n_dropped"] = matrix.n_dropped
        blocks.append(block)

    report = {
        "scenarios": blocks,
        "pair_counts": pair_counts,
        "correlations": phalanx_correlations(table, phalanges),
        "dataset": dataset_summary(manifest, templates),
    }
    _write_json(out / "report.json", report)
    _write_json(
        out / "run.lock.json",
        {
            "config_sha256": config.digest(),
            "config": config.to_dict(),
            "seed": None if synth is None else synth.seed,
            "manifest_digest": manifest.digest(),
            "matcher_digest": config.matcher.digest(),
            "versions": _versions(),
        },
    )
    return out


def import_scores(path: str | Path, manifest: DatasetManifest | None = None) -> ScoreTable:
    """Validate an external score table so fusion and evaluation can use it."""
    return read_score_csv(path, manifest)
