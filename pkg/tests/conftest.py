import pytest
import torch

from stylestory.corpus import Story


@pytest.fixture(autouse=True)
def _one_thread():
    torch.set_num_threads(1)


@pytest.fixture
def figure_story():
    # event-driven story built around the keyword chain tearing -> tried -> found -> hooked
    return Story("fig1", (
        "Jenny wanted to play her old video game.",
        "She was tearing her room apart looking for it.",
        "She tried the closet first.",
        "She found it under the bed.",
        "She hooked it up to the tv and played all night.",
    ))


# ---------------------------------------------------------------- acceptance reporting

CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.fixture
def detail(request):
    """Tests put a one-line evidence summary in ``detail["msg"]``."""
    box = {"msg": ""}
    request.node._criterion_detail = box
    return box


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    msg = getattr(item, "_criterion_detail", {}).get("msg", "")
    if report.when == "setup" and report.skipped:
        reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else str(report.longrepr)
        CRITERIA[number] = ("SKIP", title, reason.removeprefix("Skipped: "))
    elif report.when == "call":
        if report.skipped:
            reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else str(report.longrepr)
            CRITERIA[number] = ("SKIP", title, reason.removeprefix("Skipped: "))
        else:
            status = "PASS" if report.passed else "FAIL"
            if report.failed and not msg:
                msg = str(call.excinfo.value).splitlines()[0] if call.excinfo else ""
            CRITERIA[number] = (status, title, msg)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        status, title, msg = CRITERIA[number]
        terminalreporter.write_line(f"[{status}] criterion {number}: {title}" + (f" | {msg}" if msg else ""))
