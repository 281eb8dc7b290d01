"""Subsampling probability vectors.

Baselines score each row by ``|y_i - mu_i|`` times a row norm:

=========  ===========================================
random     1/N
aopt       ``||J^-1 x_i||``
lopt       ``||x_i||``
l1opt      ``sqrt(x_i' J^-1 G J^-1 x_i)``, ``G = X' W^2 X / N``
=========  ===========================================

RLmAMSE scores each row by the change in the AMSE loss of a pilot
subsample when that row's contribution is added to the two information
matrices, and turns those reductions of loss into probabilities.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionError
from .glm import Dataset, Family, mean_response, working_weights
from .loss import SigmaPair, loss_weights, sigma_estimates, spd_inverse

METHODS = ("random", "aopt", "lopt", "l1opt",
           "rlmamse", "rlmamse-pow", "rlmamse-logodds")
SCALED_METHODS = ("rlmamse-pow", "rlmamse-logodds")

_SUM_TOL = 1e-12
_CHUNK = 8192


@dataclass
class ProbabilityVector:
    phi: np.ndarray
    method: str
    scaling: Optional[tuple] = None
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        if self.phi.ndim != 1 or self.phi.size < 2:
            raise ValueError("probability vector needs at least two entries")
        if np.any(self.phi < 0) or not np.all(np.isfinite(self.phi)):
            raise ValueError("probabilities must be finite and non-negative")
        total = math.fsum(self.phi)
        if abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")

    def __len__(self) -> int:
        return self.phi.size


def _normalize(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return values / math.fsum(values)


def floor_probs(phi, N: Optional[int] = None) -> np.ndarray:
    """Raise every entry to at least ``1/(100 N)`` and renormalise."""
    phi = np.asarray(phi, dtype=float)
    N = phi.size if N is None else N
    return _normalize(np.maximum(phi, 1.0 / (100.0 * N)))


def uniform_probs(N: int) -> ProbabilityVector:
    if N < 2:
        raise ValueError(f"need N >= 2 rows to sample from, got {N}")
    return ProbabilityVector(np.full(N, 1.0 / N), "random")


def _from_scores(scores, method: str) -> ProbabilityVector:
    scores = np.asarray(scores, dtype=float)
    if not np.any(scores > 0):
        msg = f"{method}: every score is zero; falling back to uniform"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        pv = uniform_probs(scores.size)
        pv.method = method
        pv.warnings.append(msg)
        return pv
    phi = _normalize(scores)
    if np.any(phi == 0):
        phi = floor_probs(phi)
    return ProbabilityVector(phi, method)


def _fitted(full: Dataset, beta, family: Family):
    eta = full.X @ np.asarray(beta, float)
    return np.abs(full.y - mean_response(eta, family)), working_weights(eta, family)


def aopt_probs(full: Dataset, beta, family: "Family | str") -> ProbabilityVector:
    family = Family.of(family)
    resid, w = _fitted(full, beta, family)
    X = full.X
    Jinv = spd_inverse((X.T * w) @ X / full.N)
    return _from_scores(resid * np.linalg.norm(X @ Jinv, axis=1), "aopt")


def lopt_probs(full: Dataset, beta, family: "Family | str") -> ProbabilityVector:
    family = Family.of(family)
    resid, _ = _fitted(full, beta, family)
    return _from_scores(resid * np.linalg.norm(full.X, axis=1), "lopt")


def l1opt_probs(full: Dataset, beta, family: "Family | str") -> ProbabilityVector:
    family = Family.of(family)
    resid, w = _fitted(full, beta, family)
    X = full.X
    Jinv = spd_inverse((X.T * w) @ X / full.N)
    G = (X.T * w ** 2) @ X / full.N
    M = Jinv @ G @ Jinv
    quad = np.einsum("ij,jk,ik->i", X, M, X)
    return _from_scores(resid * np.sqrt(np.maximum(quad, 0.0)), "l1opt")


# -- reduction of loss ------------------------------------------------------

@dataclass(frozen=True)
class RLState:
    """Pilot-subsample quantities held fixed while candidates are scored."""

    X: np.ndarray
    w: np.ndarray
    w_delta: np.ndarray
    f: np.ndarray
    J: np.ndarray
    J_inv: np.ndarray
    J_delta: np.ndarray
    b_star: np.ndarray
    gram_w2: np.ndarray
    h: np.ndarray
    c: float
    r: int
    family: Family
    beta: np.ndarray
    sigma: Optional[SigmaPair]
    base_loss: float
    indices: Optional[np.ndarray] = None

    def candidate_weights(self, X, f):
        """``(w, w_delta)`` for candidate rows under this state's fit."""
        w, w_delta, _ = loss_weights(X, self.beta, f, self.family, self.sigma)
        return w, w_delta


def _quad_loss(A, Jd, state: RLState) -> np.ndarray:
    """l1 of the pilot rows for a batch of inverse information matrices."""
    G = state.gram_w2
    T = A @ Jd @ A
    variance = np.einsum("mij,ji->m", T, G) / state.r
    Ab = A @ state.b_star
    bias = (np.einsum("mi,ij,mj->m", Ab, G, Ab) - 2.0 * Ab @ state.h + state.c)
    return variance + bias


def make_rl_state(rows: Dataset, beta, f_sub, family: "Family | str",
                  sigma: Optional[SigmaPair] = None, indices=None) -> RLState:
    """Precompute the information matrices of a pilot subsample.

    For the Gaussian family the residual variances are estimated from
    ``rows`` unless ``sigma`` is given.
    """
    family = Family.of(family)
    X = rows.X
    r, d = X.shape
    if r < d:
        raise DimensionError(f"pilot subsample has {r} rows, need at least {d}")
    f_sub = np.asarray(f_sub, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if family.kind == "gaussian" and sigma is None:
        sigma = sigma_estimates(rows, beta, f_sub)
    w, w_delta, rho = loss_weights(X, beta, f_sub, family, sigma)
    J = (X.T * w) @ X / r
    J_delta = (X.T * w_delta) @ X / r
    b = X.T @ rho / r
    J_inv = spd_inverse(J)
    G = (X.T * w ** 2) @ X
    h = X.T @ (w ** 2 * f_sub)
    c = float(np.sum((w * f_sub) ** 2))
    v = J_inv @ b
    base = np.sum((J_inv @ J_delta @ J_inv) * G.T) / r + v @ G @ v - 2.0 * v @ h + c
    return RLState(X, w, w_delta, f_sub, J, J_inv, J_delta, b, G, h, c, r,
                   family, beta, sigma, float(base),
                   None if indices is None else np.asarray(indices))


def _augmented(state: RLState, Xc, wc, wdc):
    r = state.r
    outer = np.einsum("mi,mj->mij", Xc, Xc)
    Jp = (r * state.J + wc[:, None, None] * outer) / (r + 1)
    Jdp = (r * state.J_delta + wdc[:, None, None] * outer) / (r + 1)
    return Jp, Jdp


def _inverse_fast(state: RLState, Xc, wc):
    """Sherman-Morrison inverse of each augmented information matrix."""
    r = state.r
    k = (r + 1) / r
    U = Xc @ state.J_inv
    s = np.einsum("mi,mi->m", U, Xc)
    cw = wc / r
    denom = 1.0 + cw * s
    ok = np.abs(denom) >= 1e-12
    gamma = np.where(ok, cw / np.where(ok, denom, 1.0), 0.0)
    A = k * (state.J_inv[None] - gamma[:, None, None]
             * np.einsum("mi,mj->mij", U, U))
    return A, ok


def rl_vector(state: RLState, X_cand, f_cand, method: str = "fast") -> np.ndarray:
    """Reduction of loss ``l1(X*+i) - l1(X*)`` for every candidate row.

    ``method="fast"`` uses a rank-one inverse update; ``"reference"``
    inverts each augmented information matrix from scratch.
    """
    X_cand = np.atleast_2d(np.asarray(X_cand, dtype=float))
    f_cand = np.atleast_1d(np.asarray(f_cand, dtype=float))
    if X_cand.shape[1] != state.X.shape[1]:
        raise DimensionError(
            f"candidate rows have {X_cand.shape[1]} columns, expected {state.X.shape[1]}",
            expected=state.X.shape[1], actual=X_cand.shape[1])
    out = np.empty(X_cand.shape[0])
    for lo in range(0, X_cand.shape[0], _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        Xc = X_cand[sl]
        wc, wdc = state.candidate_weights(Xc, f_cand[sl])
        Jp, Jdp = _augmented(state, Xc, wc, wdc)
        if method == "fast":
            A, ok = _inverse_fast(state, Xc, wc)
            if not np.all(ok):
                bad = ~ok
                A[bad] = np.linalg.inv(Jp[bad])
        elif method == "reference":
            A = np.linalg.inv(Jp)
        else:
            raise ValueError(f"unknown method {method!r}")
        out[sl] = _quad_loss(A, Jdp, state) - state.base_loss
    return out


def reduction_of_loss(state: RLState, x, f_value: float, method: str = "fast") -> float:
    """Reduction of loss for a single candidate row ``x`` with misspecification ``f_value``."""
    return float(rl_vector(state, np.asarray(x, float)[None], [f_value], method)[0])


def rl_to_probs(rl, floor: bool = True) -> ProbabilityVector:
    """Turn reductions of loss into probabilities ``(max RL - RL_i) / sum``.

    Rows whose addition lowers the loss most get the largest probability.
    With ``floor`` every entry is raised to ``1/(100 N)`` and renormalised
    so no row has probability zero.
    """
    rl = np.asarray(rl, dtype=float)
    N = rl.size
    gap = rl.max() - rl
    total = math.fsum(gap)
    scale = float(np.max(np.abs(rl))) if N else 0.0
    if total < 1e-14 or total <= 64 * N * np.finfo(float).eps * scale:
        msg = "rlmamse: all reductions of loss are equal; falling back to uniform"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        pv = uniform_probs(N)
        pv.method = "rlmamse"
        pv.warnings.append(msg)
        return pv
    phi = gap / total
    if floor:
        phi = floor_probs(phi, N)
    else:
        phi = _normalize(phi)
    return ProbabilityVector(phi, "rlmamse")


def rlmamse_probs(full: Dataset, state: RLState, f_full, method: str = "fast",
                  floor: bool = True) -> ProbabilityVector:
    f_full = np.asarray(f_full, dtype=float)
    if f_full.shape[0] != full.N:
        raise DimensionError(
            f"misspecification vector has length {f_full.shape[0]}, expected {full.N}",
            expected=full.N, actual=f_full.shape[0])
    return rl_to_probs(rl_vector(state, full.X, f_full, method), floor=floor)


# -- scaling ----------------------------------------------------------------

def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not alpha > 0:
        raise ValueError(f"scaling parameter alpha must be positive, got {alpha}")
    return alpha


def _phi(p) -> np.ndarray:
    return p.phi if isinstance(p, ProbabilityVector) else np.asarray(p, float)


def _from_log(logw: np.ndarray) -> np.ndarray:
    return _normalize(np.exp(logw - logsumexp(logw)))


def power_scale(phi, alpha: float) -> ProbabilityVector:
    """``phi_i^alpha / sum_j phi_j^alpha``, computed in log space."""
    alpha = _check_alpha(alpha)
    p = _phi(phi)
    base = phi.method if isinstance(phi, ProbabilityVector) else "rlmamse"
    if alpha == 1.0:
        return ProbabilityVector(p.copy(), base, ("power", alpha))
    with np.errstate(divide="ignore"):
        logw = alpha * np.log(p)
    return ProbabilityVector(_from_log(logw), base, ("power", alpha))


def logodds_scale(phi, alpha: float, as_written: bool = True) -> ProbabilityVector:
    """``(1 + exp(alpha * logit(phi_i)))^-1``, normalised.

    ``as_written=False`` negates the exponent, which sharpens rather than
    flattens the peaks of ``phi``.
    """
    alpha = _check_alpha(alpha)
    p = _phi(phi)
    if np.any(p >= 1.0) or np.any(p < 0.0):
        raise ValueError("log-odds scaling needs every probability strictly below 1")
    with np.errstate(divide="ignore"):
        t = alpha * (np.log(p) - np.log1p(-p))
    if not as_written:
        t = -t
    logw = -np.logaddexp(0.0, t)
    base = phi.method if isinstance(phi, ProbabilityVector) else "rlmamse"
    return ProbabilityVector(_from_log(logw), base,
                             ("logodds" if as_written else "logodds-neg", alpha))
