import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from regretdesign.apps import load_ge_calibration, load_site_table
from regretdesign.model import FeasibilitySet, NormSpec, make_problem

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def loguniform(rng, size, lo=0.1, hi=10.0):
    return np.exp(rng.uniform(np.log(lo), np.log(hi), size))


positive = st.floats(min_value=0.1, max_value=10.0, allow_nan=False)
signed = st.builds(lambda m, sign: m * sign, positive, st.sampled_from([-1.0, 1.0]))


@st.composite
def problems(draw, min_p=1, max_p=4, norms=("linf", "l1", "l2", "weighted"), correlated=True):
    """Random valid problems: any sign of omega, optional correlation, any costs."""
    p = draw(st.integers(min_p, max_p))
    omega = draw(st.lists(signed, min_size=p, max_size=p))
    sd = np.array(draw(st.lists(positive, min_size=p, max_size=p)))
    sigma = np.diag(sd)
    if correlated and p > 1 and draw(st.booleans()):
        rho = draw(st.floats(-0.6, 0.6))
        corr = np.full((p, p), rho / (p - 1))
        np.fill_diagonal(corr, 1.0)
        root = np.sqrt(sd)
        sigma = corr * np.outer(root, root)
    v2 = draw(st.lists(positive, min_size=p, max_size=p))
    costs = draw(st.lists(st.floats(0.5, 2.0), min_size=p, max_size=p))
    budget = draw(st.floats(0.5, 5.0))
    k = draw(st.integers(1, p))
    kind = draw(st.sampled_from(norms))
    norm = NormSpec.weighted(draw(st.lists(st.floats(0.5, 2.0), min_size=p, max_size=p))) if kind == "weighted" else NormSpec(kind)
    return make_problem(omega, sigma, v2, budget, costs=costs, feasibility=FeasibilitySet.at_most_k(k), norm=norm)


@pytest.fixture(scope="session")
def ge_cal():
    return load_ge_calibration()


@pytest.fixture(scope="session")
def site_table():
    return load_site_table()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ------------------------------------------------------- acceptance summary

ACCEPTANCE_LINES = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record a one-line PASS/FAIL verdict for an acceptance criterion."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, {})

    def record(number: int, name: str, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'} [{number:2d}] {name}: {detail}"
        lines[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
