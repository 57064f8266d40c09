import itertools

import numpy as np
import pytest

from hedonic.market import MarketSpec, worked_example


@pytest.fixture
def example():
    return worked_example()


def random_integer_market(rng, max_x=4, max_y=4, max_z=3, max_mass=3, surplus=(-5, 10), forbid=0.0):
    nx, ny, nz = rng.integers(1, max_x + 1), rng.integers(1, max_y + 1), rng.integers(1, max_z + 1)
    alpha = rng.integers(surplus[0], surplus[1] + 1, size=(nx, nz)).astype(float)
    gamma = rng.integers(surplus[0], surplus[1] + 1, size=(nz, ny)).astype(float)
    if forbid:
        alpha[rng.random(alpha.shape) < forbid] = -np.inf
        gamma[rng.random(gamma.shape) < forbid] = -np.inf
    return MarketSpec(
        [f"x{i}" for i in range(nx)],
        [f"y{j}" for j in range(ny)],
        [f"z{k}" for k in range(nz)],
        rng.integers(0, max_mass + 1, size=nx),
        rng.integers(0, max_mass + 1, size=ny),
        alpha,
        gamma,
    )


def random_logit_market(rng, max_x=10, max_y=10, max_z=8):
    nx, ny, nz = rng.integers(1, max_x + 1), rng.integers(1, max_y + 1), rng.integers(1, max_z + 1)
    return MarketSpec(
        [f"x{i}" for i in range(nx)],
        [f"y{j}" for j in range(ny)],
        [f"z{k}" for k in range(nz)],
        rng.uniform(0.5, 2.0, size=nx),
        rng.uniform(0.5, 2.0, size=ny),
        rng.normal(0.0, 1.5, size=(nx, nz)),
        rng.normal(0.0, 1.5, size=(nz, ny)),
    )


def brute_force_welfare(spec):
    """Enumerate every choice of (consumer, quality) or opt-out for each individual producer."""
    producers = [x for x, k in enumerate(spec.n.astype(int)) for _ in range(k)]
    consumers = [y for y, k in enumerate(spec.m.astype(int)) for _ in range(k)]
    nz = spec.shape[1]
    best = 0.0

    def rec(i, used, total):
        nonlocal best
        if i == len(producers):
            best = max(best, total)
            return
        rec(i + 1, used, total)
        x = producers[i]
        for j, y in enumerate(consumers):
            if j in used:
                continue
            for z in range(nz):
                s = spec.alpha[x, z] + spec.gamma[z, y]
                if np.isfinite(s):
                    rec(i + 1, used | {j}, total + s)

    rec(0, frozenset(), 0.0)
    return best


def central_difference(f, x, delta):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = delta
        out[k] = (f(x + e) - f(x - e)) / (2 * delta)
    return out


# ---------------------------------------------------------------- acceptance report

_CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the outcome is filled in from the test result."""

    def record(number, title, detail=""):
        _CRITERIA[request.node.nodeid] = [number, title, detail, None]

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if not item.name.startswith("test_criterion_") or rep.when != "call":
        return
    # a test that fails before recording still gets a line, titled from its name
    number, _, title = item.name[len("test_criterion_"):].partition("_")
    entry = _CRITERIA.setdefault(item.nodeid, [int(number), title.replace("_", " "), "", None])
    entry[3] = rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, detail, passed in sorted(_CRITERIA.values(), key=lambda e: e[0]):
        status = "PASS" if passed else "FAIL"
        line = f"{status} criterion {number:>2}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
