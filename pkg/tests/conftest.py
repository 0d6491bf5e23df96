import numpy as np
import pytest

from prefermab import _pykernels, kernels

try:
    from prefermab import _kernels
except ImportError:  # extension not built
    _kernels = None

BACKENDS = [pytest.param(_pykernels, id="python"),
            pytest.param(_kernels, id="cython",
                         marks=pytest.mark.skipif(_kernels is None, reason="extension not built"))]
NAMES = ("mlp_forward", "mlp_backward", "greedy_proba", "pav")


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Route every kernel call through one backend for the duration of a test."""
    mod = request.param
    for name in NAMES:
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return mod


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in criterion order."""
    rows = []
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            props = dict(getattr(rep, "user_properties", ()))
            if "criterion" in props and rep.when == "call":
                rows.append((props["criterion"], "PASS" if rep.passed else "FAIL", props.get("detail", "")))
    if rows:
        terminalreporter.section("acceptance criteria")
        for n, status, detail in sorted(rows):
            terminalreporter.write_line(f"criterion {n:>2}: {status}  {detail}")
