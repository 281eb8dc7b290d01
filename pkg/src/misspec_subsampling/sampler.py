"""With-replacement sampling and the one- and two-stage subsampling algorithms."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConvergenceError, SingularSystemError
from .glm import Dataset, Family, FitResult, fit_extended, fit_mle
from .loss import LossBreakdown, amse_loss
from .misspec import BasisSpec, MisspecEstimate, extended_model_misspec
from .probs import (ProbabilityVector, aopt_probs, l1opt_probs, logodds_scale,
                    lopt_probs, make_rl_state, power_scale, rlmamse_probs,
                    uniform_probs)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``; same inputs, same stream."""
    return np.random.default_rng(
        np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


class AliasTable:
    """Walker/Vose alias table for O(1) categorical draws.

    Each draw consumes exactly one uniform double: its integer part (after
    scaling by N) picks the column and the fractional part decides between
    the column and its alias. Successive calls therefore concatenate, i.e.
    drawing ``a`` then ``b`` items equals drawing ``a + b`` at once.
    """

    def __init__(self, phi):
        p = np.asarray(phi, dtype=float)
        n = p.size
        if n < 1 or np.any(p < 0) or not p.sum() > 0:
            raise ValueError("alias table needs non-negative weights with positive sum")
        scaled = (p / p.sum() * n).tolist()
        prob = [1.0] * n
        alias = list(range(n))
        small = [i for i, v in enumerate(scaled) if v < 1.0]
        large = [i for i, v in enumerate(scaled) if v >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            if scaled[g] < 1.0:
                small.append(g)
            else:
                large.append(g)
        # leftovers are 1 up to rounding
        self.prob = np.array(prob)
        self.alias = np.array(alias, dtype=np.intp)
        self.n = n

    def draw(self, size: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(size) * self.n
        col = np.minimum(u.astype(np.intp), self.n - 1)
        frac = u - col
        return np.where(frac < self.prob[col], col, self.alias[col])


def cdf_draw(phi, size: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF categorical draws; the reference sampler for tests."""
    cdf = np.cumsum(np.asarray(phi, dtype=float))
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(size), side="right")
    return np.minimum(idx, cdf.size - 1)


@dataclass
class SubsampleDraw:
    indices: np.ndarray
    phis: np.ndarray
    stage: str = "stage1"

    def __len__(self) -> int:
        return self.indices.size


def draw_with_replacement(phi, size: int, rng: np.random.Generator,
                          stage: str = "stage1") -> SubsampleDraw:
    size = int(size)
    if size < 1:
        raise ValueError(f"subsample size must be at least 1, got {size}")
    p = phi.phi if isinstance(phi, ProbabilityVector) else np.asarray(phi, float)
    idx = AliasTable(p).draw(size, rng)
    return SubsampleDraw(idx, p[idx], stage)


def _weighted_fit(full: Dataset, idx, phis, family, beta0=None) -> FitResult:
    return fit_mle(full.subset(idx), family, weights=1.0 / phis, beta0=beta0)


def algorithm1(full: Dataset, phi, r: int, family: "Family | str",
               rng: np.random.Generator):
    """Draw ``r`` rows by ``phi`` and fit the inverse-probability weighted MLE.

    A rank-deficient draw is redrawn once before the error is surfaced.
    """
    family = Family.of(family)
    if r < full.d:
        raise ValueError(f"subsample size {r} is smaller than the {full.d} coefficients")
    for attempt in range(2):
        draw = draw_with_replacement(phi, r, rng)
        try:
            return _weighted_fit(full, draw.indices, draw.phis, family), draw
        except SingularSystemError:
            if attempt == 1:
                raise


# -- two-stage ---------------------------------------------------------------

@dataclass
class Pilot:
    """Stage-1 output: uniform draw, analysis and extended fits, f over F_N."""

    draw: SubsampleDraw
    fit: FitResult
    ext_fit: Optional[FitResult]
    f_tilde: Optional[MisspecEstimate]
    attempts: int = 1


def pilot_stage(full: Dataset, family: "Family | str", r0: int,
                rng: np.random.Generator, basis: Optional[BasisSpec] = BasisSpec(),
                max_tries: int = 3) -> Pilot:
    """Stage 1: uniform draw of ``r0`` rows, analysis fit, extended fit and
    the extended-model misspecification estimate over every row of ``full``.

    ``basis=None`` skips the extended model (baselines that do not need f).
    A draw whose fits fail or do not converge is replaced, at most
    ``max_tries`` times in total.
    """
    family = Family.of(family)
    phi = uniform_probs(full.N)
    last = None
    for attempt in range(1, max_tries + 1):
        draw = draw_with_replacement(phi, r0, rng)
        rows = full.subset(draw.indices)
        try:
            fit = fit_mle(rows, family, weights=1.0 / draw.phis)
            if not fit.converged:
                raise ConvergenceError("stage-1 analysis fit did not converge")
            if basis is None:
                return Pilot(draw, fit, None, None, attempt)
            ext = fit_extended(rows, family, basis, weights=1.0 / draw.phis,
                               beta0=fit.beta)
            if not ext.converged:
                raise ConvergenceError("stage-1 extended fit did not converge")
            f_tilde = extended_model_misspec(full, fit, ext)
            return Pilot(draw, fit, ext, f_tilde, attempt)
        except (ConvergenceError, SingularSystemError, OverflowError) as exc:
            last = exc
    raise ConvergenceError(
        f"stage 1 failed after {max_tries} draws: {last}") from last


def method_probs(full: Dataset, family: "Family | str", pilot: Pilot, method: str,
                 alpha: Optional[float] = None, log_odds_as_written: bool = True,
                 rl_method: str = "fast") -> ProbabilityVector:
    """Stage-2 probabilities for any supported method given a pilot."""
    family = Family.of(family)
    beta = pilot.fit.beta
    if method == "random":
        return uniform_probs(full.N)
    if method == "aopt":
        return aopt_probs(full, beta, family)
    if method == "lopt":
        return lopt_probs(full, beta, family)
    if method == "l1opt":
        return l1opt_probs(full, beta, family)
    if not method.startswith("rlmamse"):
        raise ValueError(f"unknown subsampling method {method!r}")
    if pilot.f_tilde is None:
        raise ValueError("RLmAMSE needs a pilot with a misspecification estimate")
    f = pilot.f_tilde.f
    idx = pilot.draw.indices
    state = make_rl_state(full.subset(idx), beta, f[idx], family, indices=idx)
    base = rlmamse_probs(full, state, f, method=rl_method)
    return scale_probs(base, method, alpha, log_odds_as_written)


def scale_probs(base: ProbabilityVector, method: str, alpha: Optional[float],
                log_odds_as_written: bool = True) -> ProbabilityVector:
    if method == "rlmamse":
        return base
    if alpha is None:
        raise ValueError(f"method {method!r} needs a scaling parameter alpha")
    if method == "rlmamse-pow":
        return power_scale(base, alpha)
    if method == "rlmamse-logodds":
        return logodds_scale(base, alpha, as_written=log_odds_as_written)
    raise ValueError(f"unknown subsampling method {method!r}")


def second_stage(full: Dataset, family: "Family | str", pilot: Pilot,
                 probs: ProbabilityVector, r: int, rng: np.random.Generator):
    """Draw ``r`` rows by ``probs`` and fit the combined weighted likelihood.

    Each row keeps the probability it was drawn under, so pilot rows carry
    weight ``N`` and stage-2 rows ``1/phi``.
    """
    draw2 = draw_with_replacement(probs, r, rng, stage="stage2")
    idx = np.concatenate([pilot.draw.indices, draw2.indices])
    phis = np.concatenate([pilot.draw.phis, draw2.phis])
    fit = _weighted_fit(full, idx, phis, family, beta0=pilot.fit.beta)
    return draw2, fit


@dataclass
class Algorithm2Result:
    beta_stage1: FitResult
    f_tilde: Optional[MisspecEstimate]
    probs: ProbabilityVector
    draw1: SubsampleDraw
    draw2: SubsampleDraw
    beta_final: FitResult
    loss: Optional[LossBreakdown]
    method: str = "rlmamse"
    alpha: Optional[float] = None
    extras: dict = field(default_factory=dict)

    @property
    def indices(self) -> np.ndarray:
        return np.concatenate([self.draw1.indices, self.draw2.indices])

    @property
    def phis(self) -> np.ndarray:
        return np.concatenate([self.draw1.phis, self.draw2.phis])


def two_stage(full: Dataset, family: "Family | str", r0: int, r: int,
              method: str = "rlmamse", alpha: Optional[float] = None,
              basis: BasisSpec = BasisSpec(), rng: Optional[np.random.Generator] = None,
              log_odds_as_written: bool = True) -> Algorithm2Result:
    """Pilot draw, method probabilities, stage-2 draw and combined fit.

    The loss is evaluated on the combined rows at the final estimate, using
    the pilot's misspecification estimate when one exists (f = 0 otherwise).
    """
    family = Family.of(family)
    rng = np.random.default_rng() if rng is None else rng
    if r < 1:
        raise ValueError(f"stage-2 size must be at least 1, got {r}")
    pilot = pilot_stage(full, family, r0, rng, basis)
    probs = method_probs(full, family, pilot, method, alpha, log_odds_as_written)
    draw2, final = second_stage(full, family, pilot, probs, r, rng)
    idx = np.concatenate([pilot.draw.indices, draw2.indices])
    f = pilot.f_tilde.f[idx] if pilot.f_tilde is not None else np.zeros(idx.size)
    try:
        loss = amse_loss(full.subset(idx), final.beta, f, family)
    except (SingularSystemError, ValueError):
        loss = None
    return Algorithm2Result(pilot.fit, pilot.f_tilde, probs, pilot.draw, draw2,
                            final, loss, method, alpha,
                            {"ext_fit": pilot.ext_fit, "stage1_attempts": pilot.attempts})


def algorithm2(full: Dataset, family: "Family | str", r0: int, r: int,
               variant: str = "rlmamse", alpha: Optional[float] = None,
               basis: BasisSpec = BasisSpec(), rng: Optional[np.random.Generator] = None,
               log_odds_as_written: bool = True) -> Algorithm2Result:
    """Two-stage RLmAMSE subsampling; ``variant`` is ``rlmamse``,
    ``rlmamse-pow`` or ``rlmamse-logodds``."""
    if not variant.startswith("rlmamse"):
        raise ValueError(f"algorithm2 variant must be an RLmAMSE method, got {variant!r}")
    family = Family.of(family)
    if r0 < full.d + len(basis.pairs(full.covariates.shape[1])):
        raise ValueError(
            f"r0={r0} cannot support the extended model "
            f"({full.d} + {len(basis.pairs(full.covariates.shape[1]))} coefficients)")
    return two_stage(full, family, r0, r, variant, alpha, basis, rng,
                     log_odds_as_written)
