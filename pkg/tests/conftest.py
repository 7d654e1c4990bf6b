import numpy as np
import pytest
import torch

from vidloc import kernels


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    return request.param


# --------------------------------------------------------------------------- acceptance summary

_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when != "call":
        return
    number, title = mark.args
    detail = dict(rep.user_properties).get("detail", "")
    if rep.failed and not detail:
        detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else ""
    _ACCEPTANCE.append((number, title, "PASS" if rep.passed else "FAIL", rep.duration, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, duration, detail in sorted(_ACCEPTANCE):
        line = f"[{status}] criterion {number}: {title} ({duration:.1f} s)"
        terminalreporter.write_line(line + (f" - {detail}" if detail else ""))
