import numpy as np
import pytest

from conftest import FAMILIES, random_dataset
from misspec_subsampling import (Dataset, amse_loss, fit_mle, info_matrices,
                                 l1_variance_criterion, sigma_estimates)
from misspec_subsampling.errors import (DegenerateFitError, DimensionError,
                                        SingularSystemError)
from misspec_subsampling.glm import mean_response, working_weights
from misspec_subsampling.loss import spd_inverse


def brute_loss(X, beta, f, family, sigma=None):
    """n x n evaluation of the loss, no Gram shortcut."""
    n = X.shape[0]
    eta = X @ beta
    if family == "gaussian":
        s2, s2d = sigma
        w = np.full(n, 1 / s2)
        wd = np.full(n, s2d / s2 ** 2)
        rho = f / s2
    else:
        w = working_weights(eta, family)
        wd = working_weights(eta + f, family)
        rho = mean_response(eta + f, family) - mean_response(eta, family)
    W = np.diag(w)
    J = X.T @ W @ X / n
    Jd = X.T @ np.diag(wd) @ X / n
    b = X.T @ rho / n
    Ji = np.linalg.inv(J)
    var = np.trace(W @ X @ Ji @ Jd @ Ji @ X.T @ W) / n
    bias = np.sum((W @ (X @ Ji @ b - f)) ** 2)
    return var, bias


@pytest.mark.parametrize("family", FAMILIES)
def test_matches_brute_force(rng, family):
    for _ in range(5):
        ds, _ = random_dataset(rng, family, n=int(rng.integers(30, 200)),
                               d=int(rng.integers(2, 6)))
        beta = fit_mle(ds, family).beta
        f = rng.normal(scale=0.3, size=ds.N)
        sigma = None
        if family == "gaussian":
            s = sigma_estimates(ds, beta, f)
            sigma = (s.sigma_sq, s.sigma_sq_delta)
        L = amse_loss(ds, beta, f, family)
        var, bias = brute_loss(ds.X, beta, f, family, sigma)
        assert L.variance_term == pytest.approx(var, rel=1e-10)
        assert L.bias_sq_term == pytest.approx(bias, rel=1e-10)
        assert L.total == pytest.approx(var + bias, rel=1e-10)


def test_gaussian_closed_form(rng):
    ds, _ = random_dataset(rng, "gaussian", n=80, d=3)
    beta = fit_mle(ds, "gaussian").beta
    f = rng.normal(scale=0.5, size=ds.N)
    s = sigma_estimates(ds, beta, f)
    H = ds.X @ np.linalg.solve(ds.X.T @ ds.X, ds.X.T)
    L = amse_loss(ds, beta, f, "gaussian")
    assert L.variance_term == pytest.approx(
        s.sigma_sq_delta / s.sigma_sq ** 2 * np.trace(H), rel=1e-10)
    assert L.bias_sq_term == pytest.approx(
        np.sum(((H @ f - f) / s.sigma_sq) ** 2), rel=1e-10)


def test_gaussian_l1_is_hat_trace(rng):
    ds, _ = random_dataset(rng, "gaussian", n=120, d=4)
    beta = fit_mle(ds, "gaussian").beta
    assert l1_variance_criterion(ds, beta, "gaussian", sigma_sq=1.0) == pytest.approx(4.0)


@pytest.mark.parametrize("family", FAMILIES)
def test_zero_misspecification_identity(rng, family):
    ds, _ = random_dataset(rng, family, n=150, d=3)
    beta = fit_mle(ds, family).beta
    L = amse_loss(ds, beta, np.zeros(ds.N), family)
    assert L.bias_sq_term == 0.0
    assert L.total == pytest.approx(l1_variance_criterion(ds, beta, family), rel=1e-12)


def test_info_matrices_symmetric(rng):
    ds, _ = random_dataset(rng, "bernoulli", n=100, d=3)
    im = info_matrices(ds.X, np.zeros(3), rng.normal(size=100), "bernoulli")
    np.testing.assert_allclose(im.J, im.J.T)
    np.testing.assert_allclose(im.J, ds.X.T @ ds.X / 400)


def test_dimension_errors(rng):
    ds, _ = random_dataset(rng, "poisson", n=50, d=3)
    with pytest.raises(DimensionError):
        amse_loss(ds, np.zeros(3), np.zeros(49), "poisson")
    with pytest.raises(DimensionError):
        amse_loss(ds, np.zeros(2), np.zeros(50), "poisson")


def test_singular_information():
    X = np.column_stack([np.ones(4), [1.0, 1.0, 1.0, 1.0]])
    with pytest.raises(SingularSystemError) as err:
        spd_inverse(X.T @ X)
    assert err.value.condition > 1e12
    with pytest.raises(SingularSystemError):
        amse_loss(Dataset(X, [0, 1, 0, 1]), np.zeros(2), np.zeros(4), "bernoulli")


def test_zero_residual_variance():
    X = np.column_stack([np.ones(5), np.arange(5.0)])
    ds = Dataset(X, X @ [1.0, 2.0])
    with pytest.raises(DegenerateFitError):
        amse_loss(ds, [1.0, 2.0], np.zeros(5), "gaussian")


def test_duplicates_count_twice(rng):
    ds, _ = random_dataset(rng, "poisson", n=40, d=2)
    beta = fit_mle(ds, "poisson").beta
    f = rng.normal(scale=0.2, size=40)
    idx = np.concatenate([np.arange(40), np.arange(40)])
    a = amse_loss(ds, beta, f, "poisson")
    b = amse_loss(ds.subset(idx), beta, f[idx], "poisson")
    # doubling every row keeps the averaged variance and doubles the bias norm
    assert b.variance_term == pytest.approx(a.variance_term, rel=1e-10)
    assert b.bias_sq_term == pytest.approx(2 * a.bias_sq_term, rel=1e-10)
