import numpy as np
import pytest

from heckmi.heckman import ClusterData


def simulate_selection(n, beta_o, beta_s, sigma=1.0, rho=0.0, family="continuous", seed=0):
    """One cluster from the bivariate-normal selection model.

    Outcome design: intercept, binary treatment, normal covariate.
    Selection design adds one exclusion variable.
    """
    g = np.random.default_rng(seed)
    x1 = (g.random(n) < 0.6).astype(float)
    x2 = g.standard_normal(n)
    x3 = g.normal(0.0, np.sqrt(0.5), n)
    xo = np.column_stack([np.ones(n), x1, x2])
    xs = np.column_stack([xo, x3])
    e1 = g.standard_normal(n)
    e2 = rho * e1 + np.sqrt(1 - rho * rho) * g.standard_normal(n)
    ystar = xo @ np.asarray(beta_o) + sigma * e1
    r = xs @ np.asarray(beta_s) + e2 > 0
    y = (ystar > 0).astype(float) if family == "binary" else ystar
    y = np.where(r, y, np.nan)
    return ClusterData(xo, xs, y, r, cluster_id=seed)


@pytest.fixture
def selection_data():
    return simulate_selection


_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """Record ``(number, title, passed, detail)`` for the end-of-run acceptance summary."""
    book = request.config.stash[_ACCEPTANCE]

    def record(number, title, passed, detail=""):
        book[number] = (title, bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    book = config.stash.get(_ACCEPTANCE, {})
    if not book:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(book):
        title, passed, detail = book[number]
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
