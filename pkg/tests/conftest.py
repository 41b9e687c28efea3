import json
import warnings

import pytest

from zaremba_pl.cli import resolve_config
from zaremba_pl.config import ExperimentConfig
from zaremba_pl.harness import execute

_criteria: dict[int, tuple[str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    n = report.user_properties and dict(report.user_properties).get("criterion")
    if not n:
        return
    text = dict(report.user_properties)["criterion_text"]
    _criteria.setdefault(n, (text, []))[1].append(report.outcome)


def pytest_runtest_setup(item):
    m = item.get_closest_marker("criterion")
    if m:
        item.user_properties.append(("criterion", m.args[0]))
        item.user_properties.append(("criterion_text", m.args[1]))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        text, outcomes = _criteria[n]
        ok = all(o == "passed" for o in outcomes)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}")


def load_shipped(name: str) -> ExperimentConfig:
    return ExperimentConfig.load(resolve_config(name))


@pytest.fixture(scope="session")
def decay_run(tmp_path_factory):
    """Full pipeline on the shipped cylinder-decay config (about 35 s)."""
    out = tmp_path_factory.mktemp("decay")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        status, manifest = execute("run", load_shipped("cylinder_decay"), out)
    reports = {p.name: json.loads(p.read_text()) for p in out.glob("*.json")}
    return {"status": status, "manifest": manifest, "out": out, "reports": reports}
