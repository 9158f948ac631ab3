import numpy as np
import pytest

from choicefit.synth import GeneratorSpec, generate

_ACCEPTANCE: dict[str, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(id, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    cid, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        status = "PASS" if rep.outcome == "passed" else "FAIL"
        if rep.outcome == "failed" and not detail:
            detail = str(rep.longrepr).strip().splitlines()[-1][:160]
        _ACCEPTANCE[cid] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")

    def order(cid):
        num = "".join(ch for ch in cid if ch.isdigit())
        return (int(num), cid)

    for cid in sorted(_ACCEPTANCE, key=order):
        status, title, detail = _ACCEPTANCE[cid]
        terminalreporter.write_line(f"[{status}] criterion {cid}: {title}" + (f" -- {detail}" if detail else ""))


@pytest.fixture
def detail(record_property):
    """Attach a human-readable measurement to the acceptance line."""

    def _detail(text):
        record_property("detail", text)

    return _detail


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def trinary_data():
    gen = GeneratorSpec(
        beta=[{"const": -0.5, "x1": 0.8, "x2": -0.4}, {"const": 0.3, "x1": -0.3, "x2": 0.6}],
        covariates={"x1": {"dist": "normal"}, "x2": {"dist": "uniform", "low": -1, "high": 1},
                    "d": {"dist": "bernoulli", "p": 0.4}},
        n=2000,
        seed=7,
    )
    return gen, generate(gen)


@pytest.fixture
def binary_data():
    gen = GeneratorSpec(
        beta=[{"const": -0.7, "x1": 0.9, "x2": 0.0, "x3": -0.6}],
        covariates={"x1": {"dist": "normal"}, "x2": {"dist": "normal"}, "x3": {"dist": "normal"}},
        n=3000,
        seed=11,
    )
    return gen, generate(gen)
