import numpy as np
import pytest

from misspec_subsampling import Dataset, Family

FAMILIES = ("gaussian", "bernoulli", "poisson")

# lines printed by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


def random_dataset(rng, family, n=300, d=3, scale=0.5):
    """Covariates ~ U(-1, 1) with an intercept and responses from a GLM."""
    cov = rng.uniform(-1.0, 1.0, size=(n, d - 1))
    beta = rng.normal(scale=scale, size=d)
    X = np.column_stack([np.ones(n), cov])
    eta = X @ beta
    kind = Family.of(family).kind
    if kind == "gaussian":
        y = eta + rng.normal(size=n)
    elif kind == "bernoulli":
        y = rng.binomial(1, 1.0 / (1.0 + np.exp(-eta))).astype(float)
    else:
        y = rng.poisson(np.exp(eta)).astype(float)
    return Dataset(X, y), beta


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
