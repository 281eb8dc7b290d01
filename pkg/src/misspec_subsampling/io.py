"""Run configuration, CSV ingestion and atomic output writing.

Tables are written as RFC-4180 CSV (header row, CRLF line ends, minimal
quoting) with floats in their shortest round-trip form. Estimates and
configuration echoes are JSON. Every file is written to a temporary name in
the target directory and renamed into place, so readers never observe a
partially written file.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import tempfile
from io import StringIO
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .glm import Dataset, Family
from .misspec import BasisSpec
from .simstudy import SimConfig

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# Keys that describe a synthetic scenario; they may not be combined with
# ``input_csv``.
SCENARIO_KEYS = ("model_id", "misspec", "N", "noise_sd")

EXECUTION_KEYS = ("threads", "out_dir")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (a usage error)."""


@dataclass
class RunConfig:
    """Everything one CLI invocation needs.

    The synthetic-study fields mirror :class:`SimConfig`; the CSV fields
    describe a real dataset. Exactly one of the two sources is used per run.
    """

    family: str = "bernoulli"
    model_id: int = 6
    misspec: str = "T2a"
    N: int = 2000
    r0: int = 100
    r_grid: list = field(default_factory=lambda: [200, 300])
    M: int = 100
    methods: list = field(default_factory=lambda: ["random", "aopt", "lopt", "l1opt",
                                                   "rlmamse", "rlmamse-pow",
                                                   "rlmamse-logodds"])
    alphas: list = field(default_factory=lambda: [5.0])
    seed: int = 1
    basis: dict = field(default_factory=lambda: BasisSpec().to_dict())
    noise_sd: float = 0.5
    log_odds_as_written: bool = True
    threads: int = 1
    out_dir: str = "out"
    # real-data fields
    input_csv: Optional[str] = None
    response_column: Optional[str] = None
    covariate_columns: Optional[list] = None
    standardize: object = False
    intercept: bool = True
    positive_class: Optional[float] = None
    schema_version: int = SCHEMA_VERSION
    # keys explicitly supplied by the user (not echoed)
    explicit: frozenset = field(default=frozenset(), repr=False, compare=False)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)} - {"explicit"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        return cls(**d, explicit=frozenset(d))

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top-level JSON value must be an object")
        return cls.from_dict(data)

    def updated(self, **overrides) -> "RunConfig":
        d = self.to_dict()
        d.update(overrides)
        return RunConfig(**d, explicit=self.explicit | frozenset(overrides))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("explicit")
        return d

    def echo(self) -> dict:
        """Configuration as echoed into outputs.

        Settings that cannot change any result (worker count, output
        location) are left out so outputs are byte-identical across them.
        """
        d = self.to_dict()
        for key in EXECUTION_KEYS:
            d.pop(key)
        return d

    @property
    def uses_csv(self) -> bool:
        return self.input_csv is not None

    def check_source(self, needs_csv: bool) -> None:
        """Enforce that exactly one data source is configured."""
        if needs_csv:
            if not self.uses_csv:
                raise ConfigError("this command needs input_csv")
            clash = sorted(self.explicit & set(SCENARIO_KEYS))
            if clash:
                raise ConfigError(
                    f"input_csv cannot be combined with scenario keys: {', '.join(clash)}")
            if not self.response_column or not self.covariate_columns:
                raise ConfigError("input_csv needs response_column and covariate_columns")
        elif self.uses_csv:
            raise ConfigError("synthetic studies do not take input_csv")

    def sim_config(self) -> SimConfig:
        try:
            return SimConfig(
                family=self.family, model_id=self.model_id, misspec=self.misspec,
                N=self.N, r0=self.r0, r_grid=list(self.r_grid), M=self.M,
                methods=list(self.methods), alphas=list(self.alphas), seed=self.seed,
                output_dir=None, basis=BasisSpec.from_dict(self.basis),
                noise_sd=self.noise_sd, log_odds_as_written=self.log_odds_as_written,
                threads=self.threads)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def basis_spec(self) -> BasisSpec:
        return BasisSpec.from_dict(self.basis)


# -- input -------------------------------------------------------------------

def _standardize_flags(standardize, n: int) -> list:
    if isinstance(standardize, bool):
        return [standardize] * n
    flags = [bool(s) for s in standardize]
    if len(flags) != n:
        raise ValueError(f"standardize has {len(flags)} flags for {n} covariates")
    return flags


def read_csv_dataset(path, response_column: str, covariate_columns: Sequence[str],
                     standardize=False, intercept: bool = True,
                     positive_class: Optional[float] = None):
    """Like :func:`load_csv` but also returns the standardisation moments.

    Returns ``(dataset, moments)`` where ``moments`` maps each standardised
    column to its ``(mean, sd)``.
    """
    path = Path(path)
    covariate_columns = list(covariate_columns)
    wanted = [response_column] + covariate_columns
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ValueError(f"{path}: file is empty")
        header = [h.strip() for h in header]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
        pos = [header.index(c) for c in wanted]
        data = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not s.strip() for s in rec):
                continue
            row = []
            for c, j in zip(wanted, pos):
                cell = rec[j].strip() if j < len(rec) else ""
                try:
                    v = float(cell)
                except ValueError:
                    raise ValueError(
                        f"{path}: line {lineno}, column {c}: non-numeric value "
                        f"{cell!r}") from None
                if not math.isfinite(v):
                    raise ValueError(f"{path}: line {lineno}, column {c}: value {cell!r}")
                row.append(v)
            data.append(row)
    if not data:
        raise ValueError(f"{path}: no data rows")
    arr = np.array(data)
    y = arr[:, 0]
    if positive_class is not None:
        y = (y == float(positive_class)).astype(float)
    cov = arr[:, 1:]
    moments = {}
    for j, flag in enumerate(_standardize_flags(standardize, cov.shape[1])):
        if not flag:
            continue
        mu = float(np.mean(cov[:, j]))
        sd = float(np.std(cov[:, j]))
        if not sd > 0:
            raise ValueError(f"{path}: column {covariate_columns[j]} is constant")
        cov[:, j] = (cov[:, j] - mu) / sd
        moments[covariate_columns[j]] = (mu, sd)
        log.info("standardised %s with mean %r and sd %r", covariate_columns[j], mu, sd)
    ds = Dataset.from_covariates(cov, y, intercept=intercept, columns=covariate_columns)
    return ds, moments


def load_csv(path, response_column: str, covariate_columns: Sequence[str],
             standardize=False, intercept: bool = True,
             positive_class: Optional[float] = None) -> Dataset:
    """Read a numeric CSV into a :class:`Dataset`.

    Parameters
    ----------
    path : path-like
        CSV file with a header row.
    response_column, covariate_columns
        Column names to use; other columns are ignored.
    standardize : bool or list of bool
        z-score the selected covariates with the file's own mean and
        (population) standard deviation. One flag per covariate or one for all.
    intercept : bool
        Prepend a column of ones.
    positive_class : float, optional
        Recode the response to 1 where it equals this value and 0 elsewhere,
        e.g. ``1`` for a class column coded 1/2.
    """
    return read_csv_dataset(path, response_column, covariate_columns, standardize,
                            intercept, positive_class)[0]


# -- output ------------------------------------------------------------------

def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return "" if v is None else str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (frozenset, set)):
        return sorted(obj)
    return obj


def atomic_write_text(path, text: str) -> Path:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def csv_text(rows: Iterable[dict], columns: Sequence[str]) -> str:
    """Render dict rows as RFC-4180 CSV text."""
    buf = StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path, rows: Iterable[dict], columns: Sequence[str]) -> Path:
    return atomic_write_text(path, csv_text(rows, columns))


def write_json(path, obj) -> Path:
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    return atomic_write_text(path, text + "\n")


def read_csv_rows(path) -> list:
    """Read a CSV written by this module back as a list of string dicts."""
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def estimates_payload(result, seed: int, config: dict) -> dict:
    """JSON-ready summary of an :class:`~.sampler.Algorithm2Result`."""
    final = result.beta_final
    return {
        "schema_version": SCHEMA_VERSION,
        "method": result.method,
        "alpha": result.alpha,
        "beta": final.beta,
        "beta_stage1": result.beta_stage1.beta,
        "converged": final.converged,
        "iterations": final.iterations,
        "final_step_norm": final.final_step_norm,
        "warnings": list(final.warnings),
        "loss": None if result.loss is None else result.loss.to_dict(),
        "n_stage1": len(result.draw1),
        "n_stage2": len(result.draw2),
        "seed": seed,
        "config": config,
    }


def subsample_rows(full: Dataset, result) -> list:
    """One row per drawn observation, in draw order, with its stage and phi."""
    names = full.columns or [f"x{j}" for j in range(full.d)]
    rows = []
    for draw in (result.draw1, result.draw2):
        for i, p in zip(draw.indices, draw.phis):
            row = {"row_index": int(i), "stage": draw.stage, "phi": float(p),
                   "y": float(full.y[i])}
            row.update({n: float(v) for n, v in zip(names, full.X[i])})
            rows.append(row)
    return rows


def write_outputs(out_dir, tables: Optional[dict] = None,
                  json_files: Optional[dict] = None) -> list:
    """Write CSV tables and JSON documents into ``out_dir``.

    ``tables`` maps a file name to ``(rows, columns)``; ``json_files`` maps a
    file name to a JSON-serialisable object. The directory is created if
    needed. Returns the written paths in a stable order.
    """
    out = Path(out_dir)
    paths = []
    for name in sorted(tables or {}):
        rows, columns = tables[name]
        paths.append(write_csv(out / name, rows, columns))
    for name in sorted(json_files or {}):
        paths.append(write_json(out / name, json_files[name]))
    return paths


def family_of(name: str) -> Family:
    try:
        return Family.of(name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
