import hypothesis
import numpy as np
import pytest

from pmce.body import build_body
from pmce.config import toy
from pmce.data import generate_dataset

hypothesis.settings.register_profile("default", max_examples=25, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile("default")


@pytest.fixture(scope="session")
def cfg():
    return toy()


@pytest.fixture(scope="session")
def body(cfg):
    return build_body(cfg.body_config())


@pytest.fixture(scope="session")
def clips(cfg):
    return generate_dataset(cfg.synth_config(), cfg.seed, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ------------------------------------------------ acceptance summary lines

_VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): acceptance criterion n")
    config.stash[_VERDICTS] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (report.when != "call" and not report.failed):
        return
    n, title = marker.args
    entry = item.config.stash[_VERDICTS].setdefault(n, {"title": title, "ok": True, "details": []})
    entry["ok"] &= report.passed
    detail = dict(item.user_properties).get("detail")
    if report.failed:
        msg = report.longrepr.reprcrash.message if hasattr(report.longrepr, "reprcrash") else str(report.longrepr)
        detail = f"{item.name}: {msg.splitlines()[0] if msg else 'failed'}"
    if detail:
        entry["details"].append(detail)


def pytest_terminal_summary(terminalreporter, config):
    verdicts = config.stash[_VERDICTS]
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        v = verdicts[n]
        terminalreporter.write_line(
            f"criterion {n:2d} {'PASS' if v['ok'] else 'FAIL'}  {v['title']}: {' | '.join(v['details'])}")
