import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def finite_difference_jacobians(model, x, u, h=1e-6):
    """Central-difference (A, B) oracle, independent of the analytic path."""
    n_x, n_u = model.n_x, model.n_u
    A = np.empty((n_x, n_x))
    B = np.empty((n_x, n_u))
    for i in range(n_x):
        e = np.zeros(n_x)
        e[i] = h
        A[:, i] = (model.step(x + e, u) - model.step(x - e, u)) / (2 * h)
    for i in range(n_u):
        e = np.zeros(n_u)
        e[i] = h
        B[:, i] = (model.step(x, u + e) - model.step(x, u - e)) / (2 * h)
    return A, B


ACCEPTANCE_RESULTS: dict[str, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_c" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            crit = name.split("_")[1]  # c01 ... c11
            lines.append((crit, "PASS" if outcome == "passed" else "FAIL", name))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for crit, verdict, name in sorted(set(lines)):
            terminalreporter.write_line(f"[{crit}] {verdict}  {name}")
