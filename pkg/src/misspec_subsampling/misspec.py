"""Estimating the misspecification vector f from a subsample.

Two estimators are provided:

* first order: ``(y - mu) / (d mu / d eta)`` evaluated at the analysis fit;
* extended model: the analysis linear predictor is augmented with a
  standardised degree-2 interaction basis ``Z`` and the estimate is the
  difference of the two fitted linear predictors,
  ``(X beta_ext + Z tau) - X beta``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError
from .glm import Dataset, Family, FitResult, mean_response, working_weights

#: working weights below this are treated as zero by the first-order estimator
MIN_WEIGHT = 1e-10


@dataclass(frozen=True)
class BasisSpec:
    include_squares: bool = True
    include_pairwise: bool = True
    custom_terms: Optional[Sequence[tuple]] = None

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        terms = d.get("custom_terms")
        return cls(bool(d.get("include_squares", True)),
                   bool(d.get("include_pairwise", True)),
                   [tuple(t) for t in terms] if terms else None)

    def to_dict(self) -> dict:
        return {"include_squares": self.include_squares,
                "include_pairwise": self.include_pairwise,
                "custom_terms": [list(t) for t in self.custom_terms]
                if self.custom_terms else None}

    def pairs(self, p: int) -> list:
        """Ordered, de-duplicated covariate index pairs for ``p`` covariates."""
        out = []
        if self.include_squares:
            out.extend((a, a) for a in range(p))
        if self.include_pairwise:
            out.extend(itertools.combinations(range(p), 2))
        for a, b in self.custom_terms or ():
            a, b = sorted((int(a), int(b)))
            if not (0 <= a < p and 0 <= b < p):
                raise DimensionError(
                    f"custom term ({a}, {b}) out of range for {p} covariates")
            out.append((a, b))
        seen, unique = set(), []
        for pair in out:
            if pair not in seen:
                seen.add(pair)
                unique.append(pair)
        return unique


@dataclass
class InteractionBasis:
    """A fitted product basis with frozen standardisation constants."""

    pairs: list
    means: np.ndarray
    scales: np.ndarray
    intercept: bool = True
    dropped: list = field(default_factory=list)

    @property
    def width(self) -> int:
        return len(self.pairs)

    def raw(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        cov = X[:, 1:] if self.intercept else X
        if not self.pairs:
            return np.empty((X.shape[0], 0))
        a = np.array([p[0] for p in self.pairs])
        b = np.array([p[1] for p in self.pairs])
        return cov[:, a] * cov[:, b]

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (self.raw(X) - self.means) / self.scales


def build_interaction_basis(X, spec: BasisSpec, intercept: bool = True) -> InteractionBasis:
    """Build a standardised product basis from the rows of ``X``.

    Columns are ordered squares first, then pairwise products, then custom
    terms. Each is centred and scaled to unit (population) variance over the
    supplied rows; constant columns are dropped and listed in ``dropped``.
    """
    X = np.asarray(X, dtype=float)
    p = X.shape[1] - (1 if intercept else 0)
    if p < 1:
        raise DimensionError("interaction basis needs at least one covariate")
    pairs = spec.pairs(p)
    probe = InteractionBasis(pairs, np.zeros(len(pairs)), np.ones(len(pairs)), intercept)
    raw = probe.raw(X)
    means = raw.mean(axis=0) if pairs else np.zeros(0)
    scales = raw.std(axis=0) if pairs else np.zeros(0)
    keep = scales > 1e-12 * np.maximum(1.0, np.abs(means))
    dropped = [pr for pr, k in zip(pairs, keep) if not k]
    return InteractionBasis(
        [pr for pr, k in zip(pairs, keep) if k], means[keep], scales[keep],
        intercept, dropped)


@dataclass
class MisspecEstimate:
    f: np.ndarray
    method: str
    source_fit: tuple = ()
    n_flagged: int = 0


def first_order_misspec(rows: Dataset, beta, family: "Family | str") -> MisspecEstimate:
    family = Family.of(family)
    eta = rows.X @ np.asarray(beta, float)
    mu = mean_response(eta, family)
    w = working_weights(eta, family)
    flagged = w < MIN_WEIGHT
    f = (rows.y - mu) / np.where(flagged, MIN_WEIGHT, w)
    return MisspecEstimate(f, "first_order", n_flagged=int(flagged.sum()))


def extended_model_misspec(full: Dataset, subsample_fit_base: FitResult,
                           subsample_fit_ext: FitResult,
                           basis: Optional[InteractionBasis] = None) -> MisspecEstimate:
    """Evaluate ``(X beta_ext + Z tau) - X beta`` on every row of ``full``.

    The basis is taken from the extended fit unless given explicitly, so the
    standardisation constants are those of the subsample it was trained on.
    """
    basis = basis if basis is not None else subsample_fit_ext.basis
    if basis is None:
        raise DimensionError("extended fit carries no interaction basis")
    d = full.d
    beta = np.asarray(subsample_fit_base.beta, float)
    ext = np.asarray(subsample_fit_ext.beta, float)
    if beta.shape[0] != d or ext.shape[0] != d + basis.width:
        raise DimensionError(
            f"expected {d} main and {d + basis.width} extended coefficients, "
            f"got {beta.shape[0]} and {ext.shape[0]}",
            expected=(d, d + basis.width), actual=(beta.shape[0], ext.shape[0]))
    f = full.X @ (ext[:d] - beta)
    if basis.width:
        f = f + basis.transform(full.X) @ ext[d:]
    return MisspecEstimate(f, "extended_model",
                           (subsample_fit_base, subsample_fit_ext))


def amsme(f_true, estimates) -> float:
    """Average mean squared misspecification error over replicate estimates."""
    f_true = np.asarray(f_true, dtype=float)
    ests = [e.f if isinstance(e, MisspecEstimate) else np.asarray(e, float)
            for e in estimates]
    if not ests:
        raise ValueError("amsme needs at least one estimate")
    for e in ests:
        if e.shape != f_true.shape:
            raise DimensionError(
                f"estimate has shape {e.shape}, expected {f_true.shape}",
                expected=f_true.shape, actual=e.shape)
    return float(np.mean([np.mean((f_true - e) ** 2) for e in ests]))
