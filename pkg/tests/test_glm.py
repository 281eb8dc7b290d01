import numpy as np
import pytest
from scipy import optimize

from conftest import FAMILIES, random_dataset
from misspec_subsampling import (BERNOULLI, Dataset, Family, fit_extended,
                                 fit_mle, mean_response, working_weights)
from misspec_subsampling.errors import (DimensionError, OverflowRowError,
                                        SingularSystemError)
from misspec_subsampling.glm import check_rank, log_likelihood
from misspec_subsampling.misspec import BasisSpec


@pytest.mark.parametrize("alias,kind", [("logistic", "bernoulli"), ("binomial", "bernoulli"),
                                        ("normal", "gaussian"), ("Poisson", "poisson")])
def test_family_aliases(alias, kind):
    assert Family.of(alias).kind == kind


def test_unknown_family():
    with pytest.raises(ValueError):
        Family.of("gamma")


def test_dataset_validation():
    with pytest.raises(DimensionError):
        Dataset(np.ones((2, 3)), np.ones(2))
    with pytest.raises(DimensionError):
        Dataset(np.ones((4, 2)), np.ones(3))
    with pytest.raises(ValueError):
        Dataset(np.array([[1.0, np.nan], [1.0, 2.0], [1.0, 3.0]]), np.ones(3))


def test_from_covariates_prepends_intercept():
    ds = Dataset.from_covariates(np.arange(6.0).reshape(3, 2), np.zeros(3))
    assert ds.d == 3
    assert ds.columns == ["intercept", "x1", "x2"]
    np.testing.assert_array_equal(ds.covariates, np.arange(6.0).reshape(3, 2))


def test_validate_for_domains():
    X = np.column_stack([np.ones(3), [0.0, 1.0, 2.0]])
    Dataset(X, [0, 1, 1]).validate_for("bernoulli")
    with pytest.raises(ValueError, match="row 2"):
        Dataset(X, [0, 1, 2]).validate_for("bernoulli")
    with pytest.raises(ValueError):
        Dataset(X, [0, 1.5, 2]).validate_for("poisson")


def test_mean_and_weights_bernoulli_tails():
    eta = np.array([-800.0, 0.0, 800.0])
    mu = mean_response(eta, BERNOULLI)
    w = working_weights(eta, BERNOULLI)
    assert mu[1] == 0.5 and w[1] == 0.25
    assert np.all(np.isfinite(mu)) and np.all(w >= 0)


def test_poisson_cap_raises():
    with pytest.raises(OverflowRowError) as err:
        mean_response(np.array([1.0, 701.0]), "poisson")
    assert err.value.row == 1


def test_gaussian_weighted_matches_normal_equations(rng):
    ds, _ = random_dataset(rng, "gaussian", n=200, d=4)
    w = rng.uniform(0.5, 3.0, size=ds.N)
    fit = fit_mle(ds, "gaussian", weights=w)
    oracle = np.linalg.solve((ds.X.T * w) @ ds.X, (ds.X.T * w) @ ds.y)
    assert fit.converged
    np.testing.assert_allclose(fit.beta, oracle, atol=1e-10)


@pytest.mark.parametrize("family", ["bernoulli", "poisson"])
def test_matches_direct_likelihood_maximisation(rng, family):
    ds, _ = random_dataset(rng, family, n=400, d=3)
    w = rng.uniform(0.5, 2.0, size=ds.N)
    fit = fit_mle(ds, family, weights=w)
    res = optimize.minimize(lambda b: -log_likelihood(ds.y, ds.X @ b, family, w),
                            np.zeros(ds.d), method="BFGS", options={"gtol": 1e-9})
    np.testing.assert_allclose(fit.beta, res.x, atol=1e-5)


@pytest.mark.parametrize("family", FAMILIES)
def test_weight_scale_invariance(rng, family):
    ds, _ = random_dataset(rng, family, n=250)
    w = rng.uniform(0.5, 2.0, size=ds.N)
    a = fit_mle(ds, family, weights=w).beta
    b = fit_mle(ds, family, weights=1000.0 * w).beta
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_rank_deficiency_raises():
    X = np.column_stack([np.ones(5), np.arange(5.0), 2 * np.arange(5.0)])
    with pytest.raises(SingularSystemError) as err:
        check_rank(X)
    assert err.value.rank == 2
    with pytest.raises(SingularSystemError):
        fit_mle(Dataset(X, np.arange(5.0)), "gaussian")


def test_separation_is_reported():
    x = np.linspace(-1, 1, 40)
    ds = Dataset.from_covariates(x, (x > 0).astype(float))
    fit = fit_mle(ds, "bernoulli")
    assert not fit.converged
    assert fit.warnings


def test_bad_weights():
    ds = Dataset.from_covariates(np.arange(4.0), np.arange(4.0))
    with pytest.raises(ValueError):
        fit_mle(ds, "gaussian", weights=[1, 1, 0, 1])
    with pytest.raises(DimensionError):
        fit_mle(ds, "gaussian", weights=[1, 1])


def test_fit_extended_layout(rng):
    ds, _ = random_dataset(rng, "poisson", n=300, d=3)
    res = fit_extended(ds, "poisson", BasisSpec())
    assert res.basis.width == 3
    assert res.beta.shape == (6,)
    assert res.main.shape == (3,) and res.tau.shape == (3,)
    assert res.converged
