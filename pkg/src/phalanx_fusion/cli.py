"""Command line entry point: ``phalanx-fusion <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 unattainable operating point under ``--strict``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, PhalanxFusionError, Unattainable
from .fusion import (
    FUSED_COLUMNS,
    Scenario,
    WeightPolicy,
    build_fusion_matrix,
    fuse_matrix,
    read_fused_csv,
    write_fused_csv,
)
from .matcher import MatcherParams
from .pipeline import (
    DEFAULT_FAR_TARGETS,
    PRESETS,
    RunConfig,
    evaluate_scores,
    expand_preset,
    import_scores,
    match_phalanx,
    run_pipeline,
)
from .protocol import SCORE_COLUMNS, Finger, concat_tables, load_manifest, load_templates
from .synth import SynthConfig, generate_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_UNATTAINABLE = 4


def _load_json(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def _parse_weights(items: list[str] | None) -> dict[int, float] | None:
    if not items:
        return None
    out = {}
    for item in items:
        try:
            p, c = item.split("=")
            out[int(p)] = float(c)
        except ValueError:
            raise ConfigError(f"static weight {item!r} is not of the form PHALANX=WEIGHT") from None
    return out


# -- commands ---------------------------------------------------------------------


def cmd_gen(args) -> int:
    d = _load_json(args.config)
    if args.seed is not None:
        d["seed"] = args.seed
    if args.subjects is not None:
        d["n_subjects"] = args.subjects
    config = SynthConfig.from_dict(d)
    manifest = generate_dataset(config, args.out)
    print(f"wrote {len(manifest)} templates and manifest.json to {args.out}")
    return EXIT_OK


def cmd_match(args) -> int:
    params = MatcherParams.from_dict(_load_json(args.config).get("matcher"))
    manifest = load_manifest(args.manifest)
    templates = load_templates(manifest)
    tables = [
        match_phalanx(
            manifest, templates, p, params,
            workers=args.workers,
            include_thumbs=args.include_thumbs,
            cross_finger=not args.same_finger,
            dedup_symmetric=args.dedup_symmetric,
        )
        for p in args.phalanx
    ]
    table = concat_tables(tables)
    table.write_csv(args.out)
    print(f"wrote {len(table)} scores ({table.pairs.n_genuine} genuine) to {args.out}")
    return EXIT_OK


def _scenarios_from_args(args) -> list[Scenario]:
    if args.preset:
        return expand_preset(args.preset)
    cfg = _load_json(args.config)
    if "scenarios" in cfg:
        return [Scenario.from_json(s) for s in cfg["scenarios"]]
    if not args.phalanges:
        raise ConfigError("give --preset, a --config with scenarios, or --phalanges")
    weights = _parse_weights(args.weights)
    if args.policy == "static_weight":
        policy = WeightPolicy.static(weights, phalanges=args.phalanges)
    else:
        policy = WeightPolicy(args.policy)
    fingers = tuple(Finger(f) for f in args.fingers)
    return [Scenario(args.name, fingers, tuple(args.phalanges), policy, joint=args.joint)]


def cmd_fuse(args) -> int:
    table = concat_tables([import_scores(p) for p in args.scores])
    scenarios = _scenarios_from_args(args)
    out = Path(args.out)
    many = len(scenarios) > 1 or out.suffix != ".csv"
    if many:
        out.mkdir(parents=True, exist_ok=True)
    for sc in scenarios:
        matrix = build_fusion_matrix(table, sc, strict=args.strict)
        fused = fuse_matrix(matrix)
        target = out / f"{sc.name}.csv" if many else out
        write_fused_csv(target, matrix, fused, sc.policy)
        dropped = f", {matrix.n_dropped} incomplete trials dropped" if matrix.n_dropped else ""
        print(f"{sc.name}: {len(matrix)} trials{dropped} -> {target}")
    return EXIT_OK


def _read_any(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path) as fh:
        header = tuple(fh.readline().strip().split(","))
    if header == FUSED_COLUMNS:
        t = read_fused_csv(path)
        return t.scores, t.genuine
    if header == SCORE_COLUMNS:
        t = import_scores(path)
        return t.scores, t.genuine
    raise DataError(f"{path}: header matches neither a score table nor a fused score file")


def cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    blocks = []
    for p in args.inputs:
        path = Path(p)
        scores, genuine = _read_any(path)
        blocks.append(
            evaluate_scores(
                path.stem, scores, genuine, args.far or DEFAULT_FAR_TARGETS,
                strict=args.strict, roc_path=out / f"roc_{path.stem}.csv",
            )
        )
    (out / "report.json").write_text(json.dumps({"scenarios": blocks}, indent=1) + "\n")
    for b in blocks:
        print(f"{b['name']}: EER {b['eer_percent']}% (n_genuine={b['n_genuine']}, n_imposter={b['n_imposter']})")
    return EXIT_OK


def cmd_run(args) -> int:
    d = _load_json(args.config)
    if args.preset:
        d["presets"] = list(dict.fromkeys(d.get("presets", []) + args.preset))
    if not d.get("presets") and not d.get("scenarios"):
        d["presets"] = list(PRESETS)
    if args.manifest:
        d["manifest"] = args.manifest
        d.pop("synth", None)
    elif "manifest" not in d:
        d.setdefault("synth", {})
    if args.subjects is not None:
        if "synth" not in d:
            raise ConfigError("--subjects only applies to synthetic runs")
        d["synth"]["n_subjects"] = args.subjects
    for key, value in (
        ("seed", args.seed), ("out", args.out), ("workers", args.workers),
    ):
        if value is not None:
            d[key] = value
    if args.strict:
        d["strict"] = True
    if args.dedup_symmetric:
        d["dedup_symmetric"] = True
    base = Path(args.config).parent if args.config else None
    config = RunConfig.from_dict(d, base_dir=base)
    out = run_pipeline(config)
    report = json.loads((out / "report.json").read_text())
    for b in report["scenarios"]:
        print(f"{b['name']:40s} EER {b['eer_percent']:5.1f}%  trials {b['n_genuine']}/{b['n_imposter']}")
    print(f"artifacts in {out}")
    return EXIT_OK


def cmd_import(args) -> int:
    manifest = load_manifest(args.manifest) if args.manifest else None
    table = import_scores(args.csv, manifest)
    summary = {
        "records": len(table),
        "genuine": table.pairs.n_genuine,
        "imposter": table.pairs.n_imposter,
        "templates": len(table.pairs.template_ids),
    }
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        table.write_csv(out)
        summary["written_to"] = str(out)
    print(json.dumps(summary))
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phalanx-fusion",
        description="Multi-phalanx fingerprint matching, score fusion and evaluation.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--config", help="synthetic config JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--subjects", type=int, help="override n_subjects")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("match", help="score all protocol pairs of a manifest")
    p.add_argument("manifest")
    p.add_argument("--config", help="JSON with a 'matcher' object")
    p.add_argument("--phalanx", type=int, nargs="+", default=[1, 2, 3], choices=[1, 2, 3])
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--include-thumbs", action="store_true")
    p.add_argument("--same-finger", action="store_true", help="no cross-finger imposter pairs")
    p.add_argument("--dedup-symmetric", action="store_true", help="one direction per unordered pair")
    p.add_argument("--out", required=True, help="score CSV to write")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("fuse", help="fuse score tables under a scenario")
    p.add_argument("scores", nargs="+", help="score CSV files")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--config", help="JSON with a 'scenarios' list")
    p.add_argument("--name", default="custom")
    p.add_argument("--fingers", nargs="+", default=["index", "middle", "ring", "little"],
                   choices=[f.value for f in Finger])
    p.add_argument("--phalanges", type=int, nargs="+", choices=[1, 2, 3])
    p.add_argument("--policy", default="simple_sum",
                   choices=["simple_sum", "quality_based", "static_weight"])
    p.add_argument("--weights", nargs="+", metavar="P=C", help="static weights, e.g. 2=0.7 3=0.3")
    p.add_argument("--joint", action="store_true", help="fuse the fingers of a hand into one trial")
    p.add_argument("--strict", action="store_true", help="fail on incomplete trials")
    p.add_argument("--out", required=True, help="fused CSV, or a directory for several scenarios")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="ROC, EER and GAR@FAR for score or fused CSVs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--far", type=float, nargs="+", help="FAR targets as fractions")
    p.add_argument("--strict", action="store_true", help="fail when a FAR target is unattainable")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="full pipeline from a run config")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--manifest", help="use an existing dataset instead of generating one")
    p.add_argument("--preset", nargs="+", choices=PRESETS)
    p.add_argument("--subjects", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--dedup-symmetric", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("import", help="validate an external score CSV")
    p.add_argument("csv")
    p.add_argument("--manifest", help="resolve template identities from a manifest")
    p.add_argument("--out", help="write the validated table here")
    p.set_defaults(func=cmd_import)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except Unattainable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNATTAINABLE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, PhalanxFusionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
