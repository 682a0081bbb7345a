from pathlib import Path

import pytest
from hypothesis import settings

DATA = Path(__file__).parent / "data"

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def fixture_manifest():
    from phalanx_fusion.protocol import load_manifest

    return load_manifest(DATA / "fixture2" / "manifest.json")


@pytest.fixture(scope="session")
def fixture_templates(fixture_manifest):
    from phalanx_fusion.protocol import load_templates

    return load_templates(fixture_manifest)


@pytest.fixture(scope="session")
def fixture_table(fixture_manifest, fixture_templates):
    """All three phalanges of the fixture dataset, matched."""
    from phalanx_fusion.protocol import concat_tables, execute_matching, generate_pairs

    fingers = ("index", "middle", "ring", "little")
    tables = []
    for p in (1, 2, 3):
        pairs = generate_pairs(fixture_manifest, [(f, p) for f in fingers])
        tables.append(execute_matching(pairs, fixture_templates))
    return concat_tables(tables)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
