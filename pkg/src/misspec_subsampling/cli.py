"""Command-line entry point.

Subcommands::

    simulate          simulated mean loss of each method    -> sml.csv
    estimate-misspec  first-order vs extended-model AMSME   -> amsme.csv
    compare-probs     pilot vs full-data probabilities      -> prob_compare.csv
    subsample         two-stage subsample of a CSV dataset  -> subsample.csv,
                                                             probs.csv,
                                                             estimates.json
    evaluate          average loss over a method grid       -> al.csv

Every run also writes ``run.json`` echoing the resolved configuration.
Exit status is 0 on success, 1 for usage or configuration errors and 2 when
the computation itself fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import SubsamplingError
from .glm import Family
from .io import (ConfigError, RunConfig, estimates_payload, family_of,
                 read_csv_dataset, subsample_rows, write_outputs)
from .probs import METHODS, uniform_probs
from .sampler import algorithm1, stream, two_stage
from .simstudy import (run_al_study, run_misspec_estimator_study,
                       run_probability_comparison, run_sml_study)

log = logging.getLogger("misspec_subsampling")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

SML_COLUMNS = ["family", "model_id", "misspec", "method", "alpha", "sml", "n_failures"]
AMSME_COLUMNS = ["family", "model_id", "misspec", "estimator", "amsme", "log_amsme",
                 "n_failures"]
PROB_COLUMNS = ["replicate", "x1", "phi_sub", "phi_full"]
AL_COLUMNS = ["method", "alpha", "r", "al", "n_failures"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=_positive_int)
    common.add_argument("--method", action="append", choices=METHODS,
                        help="subsampling method (repeatable)")
    common.add_argument("--alpha", action="append", type=float,
                        help="scaling parameter (repeatable)")
    common.add_argument("--family", help="gaussian, bernoulli (logistic) or poisson")
    common.add_argument("--r0", type=_nonneg_int, help="stage-1 (pilot) size")
    common.add_argument("--r", action="append", type=_positive_int,
                        help="stage-2 size (repeatable)")
    common.add_argument("--M", type=_positive_int, dest="M", help="replicates")
    common.add_argument("--out-dir")
    common.add_argument("--no-intercept", action="store_true")
    common.add_argument("--log-odds-as-written", type=_bool, metavar="BOOL")
    common.add_argument("--input-csv")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="misspec-subsample",
                     description="Subsampling for possibly misspecified GLMs.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in (
            ("simulate", "simulated mean loss study"),
            ("estimate-misspec", "misspecification estimator study"),
            ("compare-probs", "pilot vs full-data probability study"),
            ("subsample", "two-stage subsample of a CSV dataset"),
            ("evaluate", "average loss over a method grid on a CSV dataset")):
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
    overrides = {}
    for key in ("seed", "threads", "family", "r0", "M", "out_dir",
                "log_odds_as_written", "input_csv"):
        v = getattr(args, key)
        if v is not None:
            overrides[key] = v
    if args.method:
        overrides["methods"] = list(args.method)
    if args.alpha:
        overrides["alphas"] = list(args.alpha)
    if args.r:
        overrides["r_grid"] = list(args.r)
    if args.no_intercept:
        overrides["intercept"] = False
    return cfg.updated(**overrides) if overrides else cfg


def _echo(cfg: RunConfig, command: str, **extra) -> dict:
    return {"schema_version": cfg.schema_version, "command": command,
            "version": __version__, "config": cfg.echo(), **extra}


def cmd_simulate(cfg: RunConfig) -> list:
    cfg.check_source(needs_csv=False)
    res = run_sml_study(cfg.sim_config(), threads=cfg.threads)
    reps = []
    for m in range(res.values.shape[0]):
        for k, (method, alpha) in enumerate(res.labels):
            for q, r in enumerate(res.r_grid):
                reps.append({"replicate": m, "method": method,
                             "alpha": "" if alpha is None else alpha, "r": r,
                             "loss": res.values[m, k, q],
                             "failed": bool(res.failed[m, k])})
    extra = {"beta_B": res.beta_B} if any(b is not None for b in res.beta_B) else {}
    return write_outputs(cfg.out_dir, tables={
        "sml.csv": (res.rows, SML_COLUMNS),
        "sml_replicates.csv": (reps, ["replicate", "method", "alpha", "r", "loss",
                                      "failed"]),
    }, json_files={"run.json": _echo(cfg, "simulate", **extra)})


def cmd_estimate_misspec(cfg: RunConfig) -> list:
    cfg.check_source(needs_csv=False)
    res = run_misspec_estimator_study(cfg.sim_config(), threads=cfg.threads)
    reps = [{"replicate": m, "first_order": fo, "extended_model": ex, "failed": bool(f)}
            for m, (fo, ex, f) in enumerate(zip(res.first_order, res.extended, res.failed))]
    return write_outputs(cfg.out_dir, tables={
        "amsme.csv": (res.rows, AMSME_COLUMNS),
        "amsme_replicates.csv": (reps, ["replicate", "first_order", "extended_model",
                                        "failed"]),
    }, json_files={"run.json": _echo(cfg, "estimate-misspec")})


def cmd_compare_probs(cfg: RunConfig) -> list:
    cfg.check_source(needs_csv=False)
    res = run_probability_comparison(cfg.sim_config(), threads=cfg.threads)
    summary = [{"replicate": m, "spearman": rho, "argmax_x1_sub": a[0],
                "argmax_x1_full": a[1]}
               for m, (rho, a) in enumerate(zip(res.rank_correlations, res.argmax_x))]
    return write_outputs(cfg.out_dir, tables={
        "prob_compare.csv": (res.rows, PROB_COLUMNS),
        "prob_compare_summary.csv": (summary, ["replicate", "spearman", "argmax_x1_sub",
                                               "argmax_x1_full"]),
    }, json_files={"run.json": _echo(cfg, "compare-probs")})


def _load(cfg: RunConfig):
    cfg.check_source(needs_csv=True)
    family = family_of(cfg.family)
    full, moments = read_csv_dataset(cfg.input_csv, cfg.response_column,
                                     cfg.covariate_columns, cfg.standardize,
                                     cfg.intercept, cfg.positive_class)
    full.validate_for(family)
    return full, family, moments


def _algorithm1_payload(full, family: Family, r: int, seed: int, cfg: RunConfig):
    fit, draw = algorithm1(full, uniform_probs(full.N), r, family, stream(seed, 0))
    rows = []
    names = full.columns or [f"x{j}" for j in range(full.d)]
    for i, p in zip(draw.indices, draw.phis):
        row = {"row_index": int(i), "stage": "stage1", "phi": float(p), "y": float(full.y[i])}
        row.update({n: float(v) for n, v in zip(names, full.X[i])})
        rows.append(row)
    payload = {"schema_version": cfg.schema_version, "method": "random", "alpha": None,
               "beta": fit.beta, "converged": fit.converged, "iterations": fit.iterations,
               "final_step_norm": fit.final_step_norm, "warnings": list(fit.warnings),
               "loss": None, "n_stage1": r, "n_stage2": 0, "seed": seed}
    return rows, np.full(full.N, 1.0 / full.N), payload


def cmd_subsample(cfg: RunConfig) -> list:
    full, family, moments = _load(cfg)
    if len(cfg.r_grid) != 1:
        raise ConfigError("subsample takes exactly one stage-2 size (--r)")
    if len(cfg.methods) != 1 or len(cfg.alphas) > 1:
        raise ConfigError("subsample takes a single --method and at most one --alpha")
    method, r = cfg.methods[0], cfg.r_grid[0]
    alpha = cfg.alphas[0] if cfg.alphas else None
    if cfg.r0 == 0:
        if method != "random":
            raise ConfigError(f"method {method!r} needs a pilot (r0 > 0)")
        rows, phi, payload = _algorithm1_payload(full, family, r, cfg.seed, cfg)
    else:
        res = two_stage(full, family, cfg.r0, r, method,
                        alpha if method in ("rlmamse-pow", "rlmamse-logodds") else None,
                        cfg.basis_spec(), stream(cfg.seed, 0), cfg.log_odds_as_written)
        rows, phi = subsample_rows(full, res), res.probs.phi
        payload = estimates_payload(res, cfg.seed, {})
    payload["config"] = cfg.echo()
    payload["columns"] = full.columns
    payload["standardization"] = {k: list(v) for k, v in moments.items()}
    names = full.columns or [f"x{j}" for j in range(full.d)]
    prob_rows = [{"row_index": i, "phi": p} for i, p in enumerate(phi)]
    return write_outputs(cfg.out_dir, tables={
        "subsample.csv": (rows, ["row_index", "stage", "phi", "y"] + names),
        "probs.csv": (prob_rows, ["row_index", "phi"]),
    }, json_files={"estimates.json": payload,
                   "run.json": _echo(cfg, "subsample")})


def cmd_evaluate(cfg: RunConfig) -> list:
    full, family, moments = _load(cfg)
    res = run_al_study(full, family, cfg.r0, cfg.r_grid, cfg.M, cfg.methods,
                       cfg.alphas, cfg.seed, cfg.basis_spec(), cfg.threads,
                       cfg.log_odds_as_written)
    return write_outputs(cfg.out_dir, tables={"al.csv": (res.rows, AL_COLUMNS)},
                         json_files={"run.json": _echo(
                             cfg, "evaluate",
                             standardization={k: list(v) for k, v in moments.items()})})


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate-misspec": cmd_estimate_misspec,
    "compare-probs": cmd_compare_probs,
    "subsample": cmd_subsample,
    "evaluate": cmd_evaluate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        family_of(cfg.family)
        for m in cfg.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {METHODS}")
    except (UsageError, ConfigError, TypeError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        paths = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SubsamplingError, ValueError, ArithmeticError, OSError,
            np.linalg.LinAlgError) as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
