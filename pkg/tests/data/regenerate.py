"""Rebuild the committed fixture dataset and golden score table.

Run from the repository root:  python tests/data/regenerate.py

The golden CSV is a frozen sequential reference run; regenerate it only
when a matcher change is intended, and review the diff.
"""

from pathlib import Path

from phalanx_fusion.matcher import MatcherParams
from phalanx_fusion.protocol import NON_THUMB_FINGERS, execute_matching, generate_pairs, load_templates
from phalanx_fusion.synth import SynthConfig, generate_dataset

HERE = Path(__file__).parent
FIXTURE_SEED = 7

if __name__ == "__main__":
    manifest = generate_dataset(SynthConfig(n_subjects=2, seed=FIXTURE_SEED), HERE / "fixture2")
    templates = load_templates(manifest)
    pairs = generate_pairs(manifest, [(f, 1) for f in NON_THUMB_FINGERS])
    table = execute_matching(pairs, templates, MatcherParams(), workers=1)
    table.write_csv(HERE / "golden_phalanx1.csv")
    print(f"{len(manifest)} templates, {len(table)} golden rows")
