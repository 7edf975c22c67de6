import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from diabolo.spinmodel import ChainSpec, SiteParams

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# single Fe on Cu2N
FE = SiteParams(spin_magnitude=2, D=-1.87, E=0.31, g=2.11)


@pytest.fixture
def fe_atom():
    return ChainSpec(sites=(FE,))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ----------------------------------------------------

_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None or (report.when != "call" and report.passed):
        return
    entry = _CRITERIA.setdefault(crit, {"outcomes": [], "details": []})
    if hasattr(report, "wasxfail"):
        entry["outcomes"].append("xfail")
    else:
        entry["outcomes"].append(report.outcome)
    entry["details"] += [v for k, v in report.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_CRITERIA):
        entry = _CRITERIA[crit]
        outs = entry["outcomes"]
        if "failed" in outs:
            verdict = "FAIL"
        elif "xfail" in outs:
            verdict = "FAIL (known, documented)"
        elif "skipped" in outs:
            verdict = "SKIPPED"
        else:
            verdict = "PASS"
        detail = "; ".join(entry["details"])
        terminalreporter.write_line(f"criterion {crit:>2}: {verdict}" + (f"  [{detail}]" if detail else ""))


@pytest.fixture
def criterion(request, record_property):
    """Tag a test with its acceptance criterion and collect measured values."""
    marker = request.node.get_closest_marker("criterion")
    record_property("criterion", marker.args[0])

    def detail(text):
        record_property("detail", text)

    return detail
