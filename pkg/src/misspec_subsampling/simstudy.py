"""Synthetic scenarios and the comparative Monte Carlo studies.

Scenario codes
--------------
Two covariates, ``x1, x2 ~ Uniform(-1, 1)``:

``T1``  no misspecification
``T2a`` x1^2          ``T2b`` x1 x2          ``T2c`` x1^2 + x1 x2
``T2d`` x1^2 + x2^2 + x1 x2                  ``T2e`` (x1 + x2)^2
``T3a``..``T3e``  as T2, scaled by ``beta_B ~ Uniform(0.75, 1.25)``

One covariate: ``S1`` none, ``S2`` x1^2, ``S3`` beta_B * x1^2.

Every term is standardised with its own dataset moments before scaling.

Replicates draw their random numbers from streams keyed by
``(seed, replicate, purpose, ...)`` so results do not depend on the number
of worker threads or on execution order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import (ConvergenceError, DegenerateFitError, SingularSystemError,
                     StudyError)
from .glm import Dataset, Family, fit_extended, fit_mle
from .loss import amse_loss, l1_variance_criterion
from .misspec import (BasisSpec, amsme, extended_model_misspec,
                      first_order_misspec)
from .probs import METHODS, SCALED_METHODS, make_rl_state, rlmamse_probs
from .sampler import (method_probs, pilot_stage, scale_probs, second_stage,
                      stream)

MODELS_TWO_COVARIATES = {
    1: (-1.00, -0.75, -0.75),
    2: (-1.00, -0.75, -0.50),
    3: (-1.00, -0.50, -0.50),
    4: (-1.00, -0.50, -0.25),
    5: (-1.00, -0.25, -0.25),
    6: (-1.00, 0.25, 0.25),
    7: (-1.00, 0.50, 0.25),
    8: (-1.00, 0.50, 0.50),
    9: (-1.00, 0.75, 0.50),
    10: (-1.00, 0.75, 0.75),
}

MODELS_ONE_COVARIATE = {
    1: (-1.00, -0.75),
    2: (-1.00, -0.25),
    3: (-1.00, 0.25),
    4: (-1.00, 0.75),
}

_TERMS = {
    "a": lambda x1, x2: x1 ** 2,
    "b": lambda x1, x2: x1 * x2,
    "c": lambda x1, x2: x1 ** 2 + x1 * x2,
    "d": lambda x1, x2: x1 ** 2 + x2 ** 2 + x1 * x2,
    "e": lambda x1, x2: (x1 + x2) ** 2,
}

MISSPEC_CODES = (("T1",) + tuple(f"T2{c}" for c in "abcde")
                 + tuple(f"T3{c}" for c in "abcde") + ("S1", "S2", "S3"))

#: failures tolerated per method before a study is aborted
MAX_FAILURE_RATE = 0.05

_RECOVERABLE = (ConvergenceError, SingularSystemError, DegenerateFitError,
                OverflowError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class MisspecType:
    code: str
    beta_B_low: float = 0.75
    beta_B_high: float = 1.25

    def __post_init__(self):
        code = str(self.code).upper().replace("TYPE", "T")
        if len(code) == 3 and code[0] == "T":
            code = code[:2] + code[2].lower()
        if code not in MISSPEC_CODES:
            raise ValueError(f"unknown misspecification type {self.code!r}")
        object.__setattr__(self, "code", code)

    @property
    def single_covariate(self) -> bool:
        return self.code.startswith("S")

    @property
    def n_covariates(self) -> int:
        return 1 if self.single_covariate else 2

    @property
    def is_null(self) -> bool:
        return self.code in ("T1", "S1")

    @property
    def neighbourhood(self) -> bool:
        return self.code.startswith("T3") or self.code == "S3"

    def raw_term(self, covariates: np.ndarray) -> np.ndarray:
        covariates = np.asarray(covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        if self.single_covariate:
            return covariates[:, 0] ** 2
        return _TERMS[self.code[2]](covariates[:, 0], covariates[:, 1])


def misspec_function(code, covariates, rng: Optional[np.random.Generator] = None,
                     beta_B: Optional[float] = None) -> np.ndarray:
    """Standardised misspecification term for scenario ``code``.

    ``covariates`` excludes the intercept. Neighbourhood types draw
    ``beta_B`` from ``rng`` unless it is given.
    """
    mt = code if isinstance(code, MisspecType) else MisspecType(code)
    covariates = np.asarray(covariates, dtype=float)
    n = covariates.shape[0]
    if mt.is_null:
        return np.zeros(n)
    t = mt.raw_term(covariates)
    mu1 = np.mean(t)
    mu2 = np.mean(t ** 2)
    var = mu2 - mu1 ** 2
    if not var > 1e-12:
        raise ValueError(f"{mt.code}: misspecification term has zero variance")
    f = (t - mu1) / math.sqrt(var)
    if mt.neighbourhood:
        if beta_B is None:
            if rng is None:
                raise ValueError(f"{mt.code} needs an rng to draw beta_B")
            beta_B = rng.uniform(mt.beta_B_low, mt.beta_B_high)
        f = beta_B * f
    return f


def model_coefficients(model_id: int, single_covariate: bool = False) -> np.ndarray:
    table = MODELS_ONE_COVARIATE if single_covariate else MODELS_TWO_COVARIATES
    if model_id not in table:
        raise ValueError(f"unknown model {model_id}; expected one of {sorted(table)}")
    return np.array(table[model_id], dtype=float)


@dataclass
class SimConfig:
    family: str = "bernoulli"
    model_id: int = 6
    misspec: str = "T2a"
    N: int = 2000
    r0: int = 100
    r_grid: list = field(default_factory=lambda: [200, 300])
    M: int = 100
    methods: list = field(default_factory=lambda: list(METHODS))
    alphas: list = field(default_factory=lambda: [5.0])
    seed: int = 1
    output_dir: Optional[str] = None
    basis: BasisSpec = field(default_factory=BasisSpec)
    noise_sd: float = 0.5
    log_odds_as_written: bool = True
    threads: int = 1

    def __post_init__(self):
        self.family = Family.of(self.family).kind
        self.misspec = MisspecType(self.misspec).code
        if isinstance(self.basis, dict):
            self.basis = BasisSpec.from_dict(self.basis)
        self.r_grid = [int(r) for r in self.r_grid]
        if any(b <= a for a, b in zip(self.r_grid, self.r_grid[1:])):
            raise ValueError(f"r_grid must be strictly increasing, got {self.r_grid}")
        d = self.mtype.n_covariates + 1
        if any(r < d for r in self.r_grid):
            raise ValueError(f"every subsample size must be at least {d}")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
        self.alphas = [float(a) for a in self.alphas]

    @property
    def mtype(self) -> MisspecType:
        return MisspecType(self.misspec)

    @property
    def beta(self) -> np.ndarray:
        return model_coefficients(self.model_id, self.mtype.single_covariate)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self) -> dict:
        out = asdict(self)
        out["basis"] = self.basis.to_dict()
        return out


class SimData(NamedTuple):
    dataset: Dataset
    f_true: np.ndarray
    eta_true: np.ndarray
    beta_B: Optional[float]


def generate_dataset(config: SimConfig, rng: np.random.Generator) -> SimData:
    """Uniform(-1, 1) covariates and responses from ``X beta + f``."""
    mt = config.mtype
    family = Family.of(config.family)
    beta_B = rng.uniform(mt.beta_B_low, mt.beta_B_high) if mt.neighbourhood else None
    cov = rng.uniform(-1.0, 1.0, size=(config.N, mt.n_covariates))
    f = misspec_function(mt, cov, beta_B=beta_B)
    data = Dataset.from_covariates(cov, np.zeros(config.N))
    eta = data.X @ config.beta + f
    if family.kind == "gaussian":
        y = eta + rng.normal(0.0, config.noise_sd, config.N)
    elif family.kind == "bernoulli":
        y = rng.binomial(1, 1.0 / (1.0 + np.exp(-eta))).astype(float)
    else:
        if np.any(eta > family.eta_cap):
            raise OverflowError(
                f"model {config.model_id} / {mt.code}: Poisson rate overflows")
        y = rng.poisson(np.exp(eta)).astype(float)
    data.y = y
    return SimData(data, f, eta, beta_B)


def average_loss(losses, r_q) -> float:
    """Replicate average of ``loss / r_q`` at one subsample size."""
    losses = np.asarray(losses, dtype=float)
    if losses.size == 0:
        raise ValueError("average_loss needs at least one replicate")
    return float(np.mean(losses / r_q))


def expand_methods(methods: Sequence[str], alphas: Sequence[float]) -> list:
    """``(method, alpha)`` pairs; scaled methods are crossed with ``alphas``."""
    out = []
    for m in methods:
        if m in SCALED_METHODS:
            out.extend((m, float(a)) for a in alphas)
        else:
            out.append((m, None))
    return out


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def subsample_losses(full: Dataset, family: Family, labels, r0: int, r_grid,
                     beta_hat, f_eval, seed: int, replicate: int,
                     basis: BasisSpec, use_l1: bool,
                     log_odds_as_written: bool = True):
    """Scaled loss of every method at every stage-2 size for one replicate.

    The loss is evaluated on the ``r`` rows drawn in stage 2 and divided by
    ``r``. One pilot draw is shared by all methods and one stream of uniforms per
    subsample size is shared across methods, so method comparisons are
    paired. Returns ``(values, failed)`` with ``values`` of shape
    ``(len(labels), len(r_grid))`` (NaN where a method failed).
    """
    values = np.full((len(labels), len(r_grid)), np.nan)
    failed = np.zeros(len(labels), dtype=bool)
    try:
        pilot = pilot_stage(full, family, r0, stream(seed, replicate, 1), basis)
    except _RECOVERABLE:
        failed[:] = True
        return values, failed
    base_rl = None
    for k, (method, alpha) in enumerate(labels):
        try:
            if method.startswith("rlmamse"):
                if base_rl is None:
                    base_rl = method_probs(full, family, pilot, "rlmamse")
                probs = scale_probs(base_rl, method, alpha, log_odds_as_written)
            else:
                probs = method_probs(full, family, pilot, method)
            for q, r in enumerate(r_grid):
                draw2, fit = second_stage(full, family, pilot, probs, r,
                                          stream(seed, replicate, 2, q))
                if not fit.converged:
                    raise ConvergenceError(f"{method}: combined fit did not converge")
                idx = draw2.indices
                rows = full.subset(idx)
                if use_l1:
                    loss = l1_variance_criterion(rows, beta_hat, family)
                else:
                    loss = amse_loss(rows, beta_hat, f_eval[idx], family).total
                values[k, q] = loss / r
        except _RECOVERABLE:
            failed[k] = True
            values[k] = np.nan
    return values, failed


@dataclass
class StudyResult:
    """Aggregated table plus per-replicate values behind it."""

    rows: list
    labels: list
    values: np.ndarray
    failed: np.ndarray
    r_grid: list
    config: dict
    beta_B: list = field(default_factory=list)

    def replicate_means(self) -> np.ndarray:
        """``(M, n_methods)`` average over subsample sizes per replicate."""
        return np.mean(self.values, axis=2)

    def column(self, method: str, alpha: Optional[float] = None) -> np.ndarray:
        return self.replicate_means()[:, self.labels.index((method, alpha))]


def _check_failures(failed: np.ndarray, labels, M: int):
    counts = failed.sum(axis=0)
    for (method, alpha), c in zip(labels, counts):
        if c > MAX_FAILURE_RATE * M:
            raise StudyError(
                f"{method}{'' if alpha is None else f'(alpha={alpha:g})'} failed "
                f"in {int(c)} of {M} replicates")
    return counts


def run_sml_study(config: SimConfig, threads: Optional[int] = None) -> StudyResult:
    """Simulated mean loss of each method.

    Each replicate generates a fresh dataset, fits the analysis model to all
    of it and evaluates, on each method's stage-2 rows, the AMSE loss at the
    full-data estimate with the true misspecification (relative to that
    estimate), divided by the stage-2 size. Under no
    misspecification the L1 criterion is reported instead.
    """
    family = Family.of(config.family)
    labels = expand_methods(config.methods, config.alphas)
    use_l1 = config.mtype.is_null
    threads = config.threads if threads is None else threads

    def one(m):
        sim = generate_dataset(config, stream(config.seed, m, 0))
        full = sim.dataset
        fit = fit_mle(full, family)
        f_eval = sim.eta_true - full.X @ fit.beta
        vals, failed = subsample_losses(
            full, family, labels, config.r0, config.r_grid, fit.beta, f_eval,
            config.seed, m, config.basis, use_l1, config.log_odds_as_written)
        return vals, failed, sim.beta_B

    out = _map(one, range(config.M), threads)
    values = np.stack([o[0] for o in out])
    failed = np.stack([o[1] for o in out])
    counts = _check_failures(failed, labels, config.M)
    means = np.mean(values, axis=2)
    rows = []
    for k, (method, alpha) in enumerate(labels):
        ok = ~failed[:, k]
        rows.append({
            "family": family.kind, "model_id": config.model_id,
            "misspec": config.misspec, "method": method,
            "alpha": "" if alpha is None else alpha,
            "sml": float(np.mean(means[ok, k])) if ok.any() else float("nan"),
            "n_failures": int(counts[k]),
        })
    return StudyResult(rows, labels, values, failed, list(config.r_grid),
                       config.to_dict(), [o[2] for o in out])


def run_al_study(full: Dataset, family, r0: int, r_grid, M: int,
                 methods: Sequence[str], alphas: Sequence[float], seed: int,
                 basis: BasisSpec = BasisSpec(include_squares=False),
                 threads: int = 1, log_odds_as_written: bool = True) -> StudyResult:
    """Average loss per method and stage-2 size on a fixed dataset.

    The loss is evaluated at the full-data estimate with the misspecification
    estimated by an extended model fitted to the whole dataset.
    """
    family = Family.of(family)
    labels = expand_methods(methods, alphas)
    fit = fit_mle(full, family)
    ext = fit_extended(full, family, basis, beta0=fit.beta)
    f_hat = extended_model_misspec(full, fit, ext).f

    def one(m):
        return subsample_losses(full, family, labels, r0, list(r_grid), fit.beta,
                                f_hat, seed, m, basis, False, log_odds_as_written)

    out = _map(one, range(M), threads)
    values = np.stack([o[0] for o in out])
    failed = np.stack([o[1] for o in out])
    counts = _check_failures(failed, labels, M)
    rows = []
    for k, (method, alpha) in enumerate(labels):
        ok = ~failed[:, k]
        for q, r in enumerate(r_grid):
            rows.append({
                "method": method, "alpha": "" if alpha is None else alpha,
                "r": int(r),
                "al": float(np.mean(values[ok, k, q])) if ok.any() else float("nan"),
                "n_failures": int(counts[k]),
            })
    cfg = {"r0": r0, "r_grid": list(r_grid), "M": M, "methods": list(methods),
           "alphas": list(alphas), "seed": seed, "family": family.kind,
           "basis": basis.to_dict(), "log_odds_as_written": log_odds_as_written}
    return StudyResult(rows, labels, values, failed, list(r_grid), cfg)


@dataclass
class MisspecStudyResult:
    rows: list
    first_order: np.ndarray
    extended: np.ndarray
    failed: np.ndarray
    config: dict


def run_misspec_estimator_study(config: SimConfig,
                                threads: Optional[int] = None) -> MisspecStudyResult:
    """AMSME of the first-order and extended-model estimators.

    Both estimators use the same stage-1 draw in each replicate; the
    per-replicate errors are kept for paired comparisons.
    """
    family = Family.of(config.family)
    threads = config.threads if threads is None else threads

    def one(m):
        sim = generate_dataset(config, stream(config.seed, m, 0))
        full = sim.dataset
        try:
            pilot = pilot_stage(full, family, config.r0,
                                stream(config.seed, m, 1), config.basis)
        except _RECOVERABLE:
            return np.nan, np.nan, True
        fo = first_order_misspec(full, pilot.fit.beta, family)
        return (amsme(sim.f_true, [fo]), amsme(sim.f_true, [pilot.f_tilde]), False)

    out = _map(one, range(config.M), threads)
    fo = np.array([o[0] for o in out])
    ext = np.array([o[1] for o in out])
    failed = np.array([o[2] for o in out])
    if failed.sum() > MAX_FAILURE_RATE * config.M:
        raise StudyError(f"stage 1 failed in {int(failed.sum())} of {config.M} replicates")
    rows = []
    for name, vals in (("first_order", fo), ("extended_model", ext)):
        a = float(np.mean(vals[~failed]))
        rows.append({"family": family.kind, "model_id": config.model_id,
                     "misspec": config.misspec, "estimator": name, "amsme": a,
                     "log_amsme": math.log(a) if a > 0 else float("-inf"),
                     "n_failures": int(failed.sum())})
    return MisspecStudyResult(rows, fo, ext, failed, config.to_dict())


@dataclass
class ProbCompareResult:
    rows: list
    rank_correlations: list
    argmax_x: list
    config: dict


def full_data_probs(full: Dataset, family, basis: BasisSpec):
    """RLmAMSE probabilities with the whole dataset playing the pilot."""
    family = Family.of(family)
    fit = fit_mle(full, family)
    ext = fit_extended(full, family, basis, beta0=fit.beta)
    f_hat = extended_model_misspec(full, fit, ext).f
    state = make_rl_state(full, fit.beta, f_hat, family)
    return rlmamse_probs(full, state, f_hat)


def run_probability_comparison(config: SimConfig,
                               threads: Optional[int] = None) -> ProbCompareResult:
    """Pilot-based versus full-data RLmAMSE probabilities, per replicate.

    Rows are emitted sorted by the first covariate so each replicate traces
    two probability curves over the covariate grid.
    """
    family = Family.of(config.family)
    if not config.mtype.single_covariate:
        raise ValueError("the probability comparison uses single-covariate scenarios (S1-S3)")
    threads = config.threads if threads is None else threads

    def one(m):
        sim = generate_dataset(config, stream(config.seed, m, 0))
        full = sim.dataset
        pilot = pilot_stage(full, family, config.r0, stream(config.seed, m, 1),
                            config.basis)
        phi_sub = method_probs(full, family, pilot, "rlmamse").phi
        phi_full = full_data_probs(full, family, config.basis).phi
        return full.covariates[:, 0], phi_sub, phi_full

    out = _map(one, range(config.M), threads)
    rows, rhos, argmax = [], [], []
    for m, (x1, ps, pf) in enumerate(out):
        order = np.argsort(x1, kind="stable")
        for i in order:
            rows.append({"replicate": m, "x1": float(x1[i]),
                         "phi_sub": float(ps[i]), "phi_full": float(pf[i])})
        rhos.append(float(stats.spearmanr(ps, pf).statistic))
        argmax.append((float(x1[np.argmax(ps)]), float(x1[np.argmax(pf)])))
    return ProbCompareResult(rows, rhos, argmax, config.to_dict())
