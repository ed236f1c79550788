import numpy as np
import pytest

from oncowave.dispersion import find_critical_rhos
from oncowave.model import ModelParams
from oncowave.wave import build_envelope

# filled by test_acceptance; printed at the end of the session
ACCEPTANCE_LINES = []


def random_params(rng):
    a = 10 ** rng.uniform(-1, 1.2)
    g = 10 ** rng.uniform(-0.5, 1.5)
    D = 10 ** rng.uniform(-2, 0.5)
    th = a * g * (1 + 10 ** rng.uniform(-1, 1.5))
    return ModelParams(a, th, g, D)


def random_envelopes(n, seed=0):
    """n admissible envelopes from cases 1-3 with c a few percent above c_bar."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        p = random_params(rng)
        crit = find_critical_rhos(p)
        if crit.case == 4:
            continue
        c = crit.c_bar * (1 + rng.uniform(0.01, 0.5))
        out.append(build_envelope(c, p, crit=crit))
    return out


@pytest.fixture(scope="session")
def base_params():
    return ModelParams(0.96, 25.0, 40.0 / 3.0, 0.025)


@pytest.fixture(scope="session")
def base_envelope(base_params):
    crit = find_critical_rhos(base_params)
    return build_envelope(1.05 * crit.c_bar, base_params, crit=crit)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
