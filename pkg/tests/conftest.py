import numpy as np
import pytest

from premia import AlignedDataset, estimate_first_pass


def make_panel(seed=0, T=300, N=10, K=2, beta_scale=1.0, e_scale=0.0, noise=1.0,
               intercept=0.0):
    rng = np.random.default_rng(seed)
    F = rng.normal(0.5, 2.0, (T, K))
    beta = beta_scale * rng.normal(1.0, 0.5, (N, K))
    e = e_scale * rng.normal(size=N)
    lam = rng.normal(0.5, 0.3, K)
    R = intercept + beta @ lam + e + (F - F.mean(0)) @ beta.T + noise * rng.normal(size=(T, N))
    return R, F


def make_fp(seed=0, mode="imposed_zero", **kw):
    R, F = make_panel(seed, **kw)
    return estimate_first_pass(AlignedDataset.from_arrays(R, F, zero_beta_mode=mode))


@pytest.fixture
def fp2():
    return make_fp(3, T=400, N=8, K=2, e_scale=0.2)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
