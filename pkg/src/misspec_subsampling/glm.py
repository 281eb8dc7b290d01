"""Exponential-family GLM machinery with canonical links.

Three families are supported, each with its canonical link:

- ``gaussian``  identity link, mu = eta
- ``bernoulli`` logit link, mu = 1 / (1 + exp(-eta))
- ``poisson``   log link, mu = exp(eta)

Fitting uses Newton / IRLS on an optionally weighted log-likelihood, where
each row's contribution is multiplied by its weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.special import expit

from .errors import DimensionError, OverflowRowError, SingularSystemError

FAMILY_KINDS = ("gaussian", "bernoulli", "poisson")

_ALIASES = {
    "gaussian": "gaussian",
    "normal": "gaussian",
    "linear": "gaussian",
    "bernoulli": "bernoulli",
    "binomial": "bernoulli",
    "logistic": "bernoulli",
    "poisson": "poisson",
}

#: IRLS defaults
TOL = 1e-8
MAX_ITER = 100
#: Poisson linear predictor cap (natural-log units)
ETA_CAP = 700.0
#: relative pivot threshold for the rank check
RANK_RTOL = 1e-12


@dataclass(frozen=True)
class Family:
    """A GLM family with its canonical link."""

    kind: str
    eta_cap: float = ETA_CAP

    def __post_init__(self):
        kind = _ALIASES.get(str(self.kind).lower())
        if kind is None:
            raise ValueError(
                f"unknown family {self.kind!r}; expected one of {FAMILY_KINDS}")
        object.__setattr__(self, "kind", kind)

    @classmethod
    def of(cls, family: "Family | str") -> "Family":
        return family if isinstance(family, Family) else cls(family)

    @property
    def link_name(self) -> str:
        return {"gaussian": "identity", "bernoulli": "logit",
                "poisson": "log"}[self.kind]

    def __str__(self) -> str:
        return self.kind


GAUSSIAN = Family("gaussian")
BERNOULLI = Family("bernoulli")
POISSON = Family("poisson")


@dataclass
class Dataset:
    """Response vector and design matrix.

    ``X`` already contains the intercept column when ``has_intercept`` is
    true; use :meth:`from_covariates` to prepend it.
    """

    X: np.ndarray
    y: np.ndarray
    has_intercept: bool = True
    columns: Optional[list] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.X.ndim != 2:
            raise DimensionError("X must be two-dimensional")
        if self.X.shape[0] != self.y.shape[0]:
            raise DimensionError(
                f"X has {self.X.shape[0]} rows but y has length {self.y.shape[0]}",
                expected=self.X.shape[0], actual=self.y.shape[0])
        if self.X.shape[0] < self.X.shape[1]:
            raise DimensionError(
                f"need N >= d, got N={self.X.shape[0]}, d={self.X.shape[1]}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset contains non-finite entries")

    @classmethod
    def from_covariates(cls, covariates, y, intercept: bool = True,
                        columns: Optional[Sequence[str]] = None) -> "Dataset":
        Xc = np.asarray(covariates, dtype=float)
        if Xc.ndim == 1:
            Xc = Xc[:, None]
        names = list(columns) if columns is not None else [
            f"x{j + 1}" for j in range(Xc.shape[1])]
        if intercept:
            Xc = np.column_stack([np.ones(Xc.shape[0]), Xc])
            names = ["intercept"] + names
        return cls(Xc, y, has_intercept=intercept, columns=names)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def covariates(self) -> np.ndarray:
        """Design matrix without the intercept column."""
        return self.X[:, 1:] if self.has_intercept else self.X

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.X[idx], self.y[idx], self.has_intercept, self.columns)

    def validate_for(self, family: "Family | str") -> None:
        family = Family.of(family)
        if family.kind == "bernoulli" and not np.all((self.y == 0) | (self.y == 1)):
            bad = int(np.flatnonzero((self.y != 0) & (self.y != 1))[0])
            raise ValueError(f"bernoulli response must be 0/1 (row {bad}: {self.y[bad]})")
        if family.kind == "poisson" and not np.all(
                (self.y >= 0) & (self.y == np.round(self.y))):
            bad = int(np.flatnonzero((self.y < 0) | (self.y != np.round(self.y)))[0])
            raise ValueError(
                f"poisson response must be a non-negative integer (row {bad}: {self.y[bad]})")


@dataclass
class FitResult:
    beta: np.ndarray
    converged: bool
    iterations: int
    final_step_norm: float
    deviance: float
    warnings: list = field(default_factory=list)
    #: fitted interaction basis for extended fits (None for plain fits)
    basis: object = None
    #: number of analysis-model coefficients at the front of ``beta``
    n_main: Optional[int] = None

    @property
    def main(self) -> np.ndarray:
        return self.beta if self.n_main is None else self.beta[: self.n_main]

    @property
    def tau(self) -> np.ndarray:
        return np.empty(0) if self.n_main is None else self.beta[self.n_main:]


def _as_eta(eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise ValueError("linear predictor contains non-finite values")
    return eta


def _check_cap(eta: np.ndarray, family: Family) -> None:
    if family.kind == "poisson":
        over = np.flatnonzero(eta > family.eta_cap)
        if over.size:
            raise OverflowRowError(int(over[0]), float(eta[over[0]]), family.eta_cap)


def linear_predictor(dataset: "Dataset | np.ndarray", beta) -> np.ndarray:
    X = dataset.X if isinstance(dataset, Dataset) else np.asarray(dataset, float)
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape[0] != X.shape[1]:
        raise DimensionError(
            f"coefficient vector has length {beta.shape[0]}, expected {X.shape[1]}",
            expected=X.shape[1], actual=beta.shape[0])
    return X @ beta


def mean_response(eta, family: "Family | str") -> np.ndarray:
    family = Family.of(family)
    eta = _as_eta(eta)
    if family.kind == "gaussian":
        return eta.copy()
    if family.kind == "bernoulli":
        return expit(eta)
    _check_cap(eta, family)
    return np.exp(eta)


def working_weights(eta, family: "Family | str") -> np.ndarray:
    """Diagonal of W = d mu / d eta."""
    family = Family.of(family)
    eta = _as_eta(eta)
    if family.kind == "gaussian":
        return np.ones_like(eta)
    if family.kind == "bernoulli":
        # expit(eta) * expit(-eta) keeps precision in both tails
        return expit(eta) * expit(-eta)
    _check_cap(eta, family)
    return np.exp(eta)


def log_likelihood(y, eta, family: "Family | str", weights=None) -> float:
    """Weighted log-likelihood up to terms free of the coefficients."""
    family = Family.of(family)
    y = np.asarray(y, dtype=float)
    eta = _as_eta(eta)
    if family.kind == "gaussian":
        contrib = -0.5 * (y - eta) ** 2
    elif family.kind == "bernoulli":
        contrib = y * eta - np.logaddexp(0.0, eta)
    else:
        contrib = y * eta - np.exp(eta)
    if weights is not None:
        contrib = contrib * weights
    return float(np.sum(contrib))


def deviance(y, eta, family: "Family | str", weights=None) -> float:
    family = Family.of(family)
    y = np.asarray(y, dtype=float)
    mu = mean_response(eta, family)
    if family.kind == "gaussian":
        unit = (y - mu) ** 2
    elif family.kind == "bernoulli":
        unit = 2.0 * (np.logaddexp(0.0, eta) - y * eta)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            ylog = np.where(y > 0, y * np.log(y / mu), 0.0)
        unit = 2.0 * (ylog - (y - mu))
    if weights is not None:
        unit = unit * weights
    return float(np.sum(unit))


def check_rank(X: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Numerical column rank via pivoted QR; raises when deficient."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] < X.shape[1]:
        raise SingularSystemError(
            f"{X.shape[0]} rows cannot determine {X.shape[1]} coefficients")
    R = linalg.qr(X, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        raise SingularSystemError("design matrix is identically zero")
    rank = int(np.sum(diag > rtol * diag[0]))
    if rank < X.shape[1]:
        raise SingularSystemError(
            f"design matrix is rank deficient (rank {rank} < {X.shape[1]} columns)",
            rank=rank)
    return rank


def _irls(X, y, family, weights, beta0, tol, max_iter):
    n, d = X.shape
    w_obs = np.ones(n) if weights is None else weights
    # rescale so IRLS numerics do not depend on the weight scale
    w_obs = w_obs / np.mean(w_obs)
    beta = np.zeros(d) if beta0 is None else np.asarray(beta0, float).copy()
    eta = X @ beta
    if family.kind == "poisson" and np.any(eta > family.eta_cap):
        beta = np.zeros(d)
        eta = X @ beta
    llf = log_likelihood(y, eta, family, w_obs)
    fit_warnings = []
    step_norm = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = mean_response(eta, family)
        v = working_weights(eta, family)
        if family.kind == "bernoulli" and np.all(v < 1e-10):
            fit_warnings.append(
                "working weights collapsed below 1e-10 on every row; "
                "possible complete separation")
            break
        sv = np.sqrt(np.maximum(v, 1e-300))
        sw = np.sqrt(w_obs)
        # Newton step solves (X' W X) step = score as least squares on sqrt(W) X
        step = linalg.lstsq((sw * sv)[:, None] * X, sw * (y - mu) / sv,
                            lapack_driver="gelsy")[0]
        if not np.all(np.isfinite(step)):
            fit_warnings.append("non-finite Newton step")
            break
        # step halving guards the non-Gaussian families against overshoot
        t = 1.0
        accepted = False
        for _ in range(30):
            cand = beta + t * step
            eta_c = X @ cand
            if not (family.kind == "poisson" and np.any(eta_c > family.eta_cap)):
                llf_c = log_likelihood(y, eta_c, family, w_obs)
                if family.kind == "gaussian" or llf_c >= llf - 1e-12 * (abs(llf) + 1.0):
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            fit_warnings.append("step halving failed to increase the likelihood")
            break
        delta = cand - beta
        beta, eta, llf = cand, eta_c, llf_c
        step_norm = float(np.linalg.norm(delta) / max(np.linalg.norm(beta), 1.0))
        if step_norm < tol:
            converged = True
            break
    return beta, converged, it, step_norm, fit_warnings


def fit_mle(dataset: Dataset, family: "Family | str", weights=None,
            beta0=None, tol: float = TOL, max_iter: int = MAX_ITER) -> FitResult:
    """(Weighted) maximum likelihood by IRLS.

    ``weights`` multiply each row's log-likelihood contribution; in the
    subsampling algorithms they are the inverse draw probabilities.
    Non-convergence is reported through ``converged`` rather than raised.
    """
    family = Family.of(family)
    X, y = dataset.X, dataset.y
    if weights is not None:
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.shape[0] != X.shape[0]:
            raise DimensionError(
                f"weights have length {weights.shape[0]}, expected {X.shape[0]}",
                expected=X.shape[0], actual=weights.shape[0])
        if not np.all(weights > 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and strictly positive")
    check_rank(X)
    beta, converged, it, step_norm, fit_warnings = _irls(
        X, y, family, weights, beta0, tol, max_iter)
    if not converged and not fit_warnings:
        fit_warnings.append(f"IRLS did not converge in {max_iter} iterations")
    return FitResult(
        beta=beta, converged=converged, iterations=it,
        final_step_norm=step_norm,
        deviance=deviance(y, X @ beta, family, weights),
        warnings=fit_warnings)


def fit_extended(dataset: Dataset, family: "Family | str", basis, weights=None,
                 beta0=None, tol: float = TOL, max_iter: int = MAX_ITER) -> FitResult:
    """Fit the GLM over the augmented design ``[X | Z]``.

    ``basis`` is either a :class:`~misspec_subsampling.misspec.BasisSpec`,
    in which case the interaction basis is built (and standardised) on the
    supplied rows, or an already fitted
    :class:`~misspec_subsampling.misspec.InteractionBasis`.
    The returned coefficients are the main effects followed by ``tau``.
    """
    from .misspec import BasisSpec, build_interaction_basis

    if isinstance(basis, BasisSpec):
        basis = build_interaction_basis(dataset.X, basis,
                                        intercept=dataset.has_intercept)
    Z = basis.transform(dataset.X)
    aug = Dataset(np.column_stack([dataset.X, Z]), dataset.y,
                  dataset.has_intercept)
    if beta0 is not None and len(beta0) == dataset.d:
        beta0 = np.concatenate([beta0, np.zeros(Z.shape[1])])
    res = fit_mle(aug, family, weights=weights, beta0=beta0, tol=tol,
                  max_iter=max_iter)
    res.basis = basis
    res.n_main = dataset.d
    return res
