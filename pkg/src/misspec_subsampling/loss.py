"""Asymptotic mean squared prediction error (AMSE) of a GLM under
misspecification, and the L1 (average prediction variance) criterion.

For rows ``X`` (n x d), coefficients ``beta`` and misspecification ``f``::

    J    = X' W X / n             W   = dmu/deta at X beta
    J_d  = X' W_d X / n           W_d = dmu/deta at X beta + f
    b    = X' (mu_d - mu) / n
    variance = tr(W X J^-1 J_d J^-1 X' W) / n
    bias_sq  = || W (X J^-1 b - f) ||^2

The variance trace is evaluated through the Gram identity
``tr(J^-1 J_d J^-1 G)`` with ``G = X' W^2 X`` so no n x n matrix is formed.

For the Gaussian family the dispersion enters as in the closed-form linear
model loss: W = 1/s2, W_d = s2_d/s2^2 and mu_d - mu = f/s2, which gives
``tr[(s2_d/s2^2) H] + ||(H f - f)/s2||^2`` with H the hat matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import linalg

from .errors import DegenerateFitError, DimensionError, SingularSystemError
from .glm import Dataset, Family, mean_response, working_weights

MIN_SIGMA_SQ = 1e-12


@dataclass(frozen=True)
class LossBreakdown:
    variance_term: float
    bias_sq_term: float
    total: float
    n_rows: int

    def to_dict(self) -> dict:
        return {"variance_term": self.variance_term,
                "bias_sq_term": self.bias_sq_term,
                "total": self.total, "n_rows": self.n_rows}


@dataclass(frozen=True)
class SigmaPair:
    sigma_sq: float
    sigma_sq_delta: float


class InfoMatrices(NamedTuple):
    J: np.ndarray
    J_delta: np.ndarray
    w: np.ndarray
    w_delta: np.ndarray
    b: np.ndarray


def spd_inverse(A: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix via Cholesky."""
    A = np.asarray(A, dtype=float)
    try:
        c = linalg.cho_factor(A, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        cond = np.linalg.cond(A) if np.all(np.isfinite(A)) else np.inf
        raise SingularSystemError(
            f"information matrix is not positive definite (condition {cond:.3g})",
            condition=float(cond)) from None
    inv = linalg.cho_solve(c, np.eye(A.shape[0]))
    return 0.5 * (inv + inv.T)


def loss_weights(X, beta, f, family: "Family | str",
                 sigma: Optional[SigmaPair] = None):
    """Per-row ``(w, w_delta, rho)`` with ``b = X' rho / n``."""
    family = Family.of(family)
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    f = np.asarray(f, dtype=float)
    if f.shape[0] != X.shape[0]:
        raise DimensionError(
            f"misspecification vector has length {f.shape[0]}, expected {X.shape[0]}",
            expected=X.shape[0], actual=f.shape[0])
    if beta.shape[0] != X.shape[1]:
        raise DimensionError(
            f"coefficient vector has length {beta.shape[0]}, expected {X.shape[1]}",
            expected=X.shape[1], actual=beta.shape[0])
    eta = X @ beta
    if family.kind == "gaussian" and sigma is not None:
        n = X.shape[0]
        s2, s2d = sigma.sigma_sq, sigma.sigma_sq_delta
        return (np.full(n, 1.0 / s2), np.full(n, s2d / s2 ** 2), f / s2)
    w = working_weights(eta, family)
    w_delta = working_weights(eta + f, family)
    rho = mean_response(eta + f, family) - mean_response(eta, family)
    return w, w_delta, rho


def info_matrices(X, beta, f, family: "Family | str",
                  sigma: Optional[SigmaPair] = None) -> InfoMatrices:
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n < d:
        raise DimensionError(f"need at least {d} rows, got {n}")
    w, w_delta, rho = loss_weights(X, beta, f, family, sigma)
    J = (X.T * w) @ X / n
    J_delta = (X.T * w_delta) @ X / n
    b = X.T @ rho / n
    return InfoMatrices(J, J_delta, w, w_delta, b)


def sigma_estimates(rows: Dataset, beta, f) -> SigmaPair:
    """Mean squared residuals of the analysis model, without and with f."""
    resid = rows.y - rows.X @ np.asarray(beta, float)
    s2 = float(np.mean(resid ** 2))
    s2d = float(np.mean((resid - np.asarray(f, float)) ** 2))
    if s2 < MIN_SIGMA_SQ or s2d < MIN_SIGMA_SQ:
        raise DegenerateFitError(
            f"residual variance is numerically zero (sigma^2={s2:.3g}, "
            f"sigma_delta^2={s2d:.3g})")
    return SigmaPair(s2, s2d)


def _gaussian_sigma(rows: Dataset, beta, f, family, sigma):
    if Family.of(family).kind == "gaussian" and sigma is None:
        return sigma_estimates(rows, beta, f)
    return sigma


def amse_loss(rows: Dataset, beta, f, family: "Family | str",
              sigma: Optional[SigmaPair] = None) -> LossBreakdown:
    """AMSE loss on the given rows.

    The variance term is averaged by ``1/n`` and the squared bias is the plain
    squared norm, so with ``f = 0`` the total equals
    :func:`l1_variance_criterion`. Duplicate rows simply count twice.
    """
    sigma = _gaussian_sigma(rows, beta, f, family, sigma)
    X = rows.X
    n = X.shape[0]
    f = np.asarray(f, dtype=float)
    J, J_delta, w, _, b = info_matrices(X, beta, f, family, sigma)
    Jinv = spd_inverse(J)
    G = (X.T * w ** 2) @ X
    variance = float(np.sum((Jinv @ J_delta @ Jinv) * G.T)) / n
    resid = w * (X @ (Jinv @ b) - f)
    bias_sq = float(resid @ resid)
    variance = max(variance, 0.0)
    return LossBreakdown(variance, bias_sq, variance + bias_sq, n)


def l1_variance_criterion(rows: Dataset, beta, family: "Family | str",
                          sigma_sq: Optional[float] = None) -> float:
    """Average response-scale prediction variance ``tr(W X J^-1 X' W) / n``.

    For the Gaussian family ``sigma_sq`` defaults to the mean squared
    residual on ``rows``; pass ``sigma_sq=1`` for the unscaled hat-matrix
    trace ``d``.
    """
    family = Family.of(family)
    X = rows.X
    n = X.shape[0]
    zeros = np.zeros(n)
    sigma = None
    if family.kind == "gaussian":
        if sigma_sq is None:
            sigma = sigma_estimates(rows, beta, zeros)
        else:
            sigma = SigmaPair(float(sigma_sq), float(sigma_sq))
    J, _, w, _, _ = info_matrices(X, beta, zeros, family, sigma)
    Jinv = spd_inverse(J)
    G = (X.T * w ** 2) @ X
    return float(np.sum(Jinv * G.T)) / n
