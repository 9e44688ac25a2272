import importlib

import pytest

from pnrtomo import _kernels
from pnrtomo._kernels import _pykernels

ACCEPTANCE_LINES = []


def backends():
    out = [("python", _pykernels)]
    try:
        out.append(("cython", importlib.import_module("pnrtomo._kernels._ckernels")))
    except ImportError:
        pass
    return out


@pytest.fixture(params=[name for name, _ in backends()])
def kernel_backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    module = dict(backends())[request.param]
    monkeypatch.setattr(_kernels, "composition_sum", module.composition_sum)
    monkeypatch.setattr(_kernels, "dead_time_scan", module.dead_time_scan)
    return request.param


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
