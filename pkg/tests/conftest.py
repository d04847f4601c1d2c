from __future__ import annotations

from pathlib import Path

import pytest
import yaml

from misdetect.cli import main

TESTS = Path(__file__).parent
FIXTURES = TESTS / "fixtures"
GOLDEN = TESTS / "golden"

_criteria: dict[str, list[str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _criteria.setdefault(name, []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcomes in _criteria.items():
        verdict = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def golden_dir() -> Path:
    return GOLDEN


def write_corpus_config(dest: Path, **overrides) -> Path:
    """Copy of the fixture corpus config with absolute inputs and outputs under ``dest``."""
    with (FIXTURES / "corpus.yaml").open(encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    paths = raw["paths"]
    for key in ("dataset", "instances", "truths"):
        paths[key] = str(FIXTURES / paths[key])
    paths["outputs"] = str(dest / "out")
    for spec in raw["backends"].values():
        spec["endpoint"] = str(FIXTURES / spec["endpoint"])
    for section, values in overrides.items():
        if isinstance(values, dict):
            raw.setdefault(section, {}).update(values)
        else:
            raw[section] = values
    path = dest / "config.yaml"
    path.write_text(yaml.safe_dump(raw, sort_keys=False), encoding="utf-8")
    return path


@pytest.fixture
def corpus_config(tmp_path) -> Path:
    return write_corpus_config(tmp_path)


def run_cli(*argv: str) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="session")
def built_corpus(tmp_path_factory) -> Path:
    """Outputs directory after ingest, index, distill, augment, predict, evaluate."""
    root = tmp_path_factory.mktemp("corpus")
    cfg = write_corpus_config(root)
    for cmd in ("ingest", "index", "distill", "augment", "predict", "evaluate"):
        assert run_cli(cmd, "--config", cfg) == 0, cmd
    return root / "out"

